#include "nima/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nima/error.hpp"

namespace nima {

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DegenerateInput("quaternion has zero or non-finite norm");
  }
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::from_rotation(const RotationMatrix& r) {
  const Eigen::Quaterniond q(r);
  Quaternion out{q.w(), q.x(), q.y(), q.z()};
  // canonical hemisphere
  if (out.w < 0.0) {
    out = -out;
  }
  return out.normalized();
}

RollPitch roll_pitch_from_accel(const Vec3& accel) {
  if (!accel.allFinite() || accel.norm() == 0.0) {
    throw DegenerateInput("acceleration vector is zero or non-finite; orientation undefined");
  }
  RollPitch rp;
  rp.alpha = std::atan2(accel.y(), accel.z());
  rp.beta = std::atan2(-accel.x(), std::hypot(accel.y(), accel.z()));
  return rp;
}

RotationMatrix rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  RotationMatrix r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

RotationMatrix rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  RotationMatrix r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

RotationMatrix rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  RotationMatrix r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

RotationMatrix euler_to_rotation(const EulerAngles& e) {
  return rot_z(e.theta_z) * rot_y(e.theta_y) * rot_x(e.theta_x);
}

EulerAngles rotation_to_euler(const RotationMatrix& r) {
  EulerAngles e;
  const double sy = std::clamp(-r(2, 0), -1.0, 1.0);
  e.theta_y = std::asin(sy);
  if (std::abs(sy) < 1.0 - 1e-12) {
    e.theta_x = std::atan2(r(2, 1), r(2, 2));
    e.theta_z = std::atan2(r(1, 0), r(0, 0));
  } else {
    e.theta_x = 0.0;
    e.theta_z = std::atan2(-r(0, 1), r(1, 1));
  }
  e.theta_x = wrap_angle(e.theta_x);
  e.theta_y = wrap_angle(e.theta_y);
  e.theta_z = wrap_angle(e.theta_z);
  return e;
}

RotationMatrix quat_to_rotation(const Quaternion& q) {
  const Quaternion u = q.normalized();
  const double w = u.w, x = u.x, y = u.y, z = u.z;
  RotationMatrix r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

RotationMatrix compose_chain(std::span<const RotationMatrix> rotations) {
  if (rotations.empty()) {
    throw InsufficientData("compose_chain needs at least one rotation");
  }
  RotationMatrix out = rotations.front();
  for (std::size_t i = 1; i < rotations.size(); ++i) {
    out = out * rotations[i];
  }
  return out;
}

double wrap_angle(double angle) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(angle, two_pi);
  if (a <= -std::numbers::pi) {
    a += two_pi;
  } else if (a > std::numbers::pi) {
    a -= two_pi;
  }
  return a;
}

double geodesic_angle(const RotationMatrix& a, const RotationMatrix& b) {
  const RotationMatrix d = a.transpose() * b;
  const Vec3 axis(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (d.trace() - 1.0));
}

bool is_rotation(const RotationMatrix& r, double tol) {
  return (r * r.transpose() - RotationMatrix::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

}  // namespace nima
