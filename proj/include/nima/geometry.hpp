#pragma once

#include <span>
#include <utility>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace nima {

using Vec3 = Eigen::Vector3d;
using RotationMatrix = Eigen::Matrix3d;

/// Unit quaternion stored as (w, x, y, z). This is also the column order used
/// by every CSV in the project.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  /// Throws DegenerateInput for the zero quaternion.
  Quaternion normalized() const;
  Quaternion operator-() const { return {-w, -x, -y, -z}; }

  static Quaternion from_rotation(const RotationMatrix& r);
};

/// Euler angles for R = Rz(theta_z) * Ry(theta_y) * Rx(theta_x), applied to
/// column vectors. Angles are kept in (-pi, pi].
struct EulerAngles {
  double theta_x = 0.0;
  double theta_y = 0.0;
  double theta_z = 0.0;
};

struct RollPitch {
  double alpha = 0.0;  ///< about world x, rad
  double beta = 0.0;   ///< about world y, rad
};

/// Roll and pitch from a gravity-dominated accelerometer reading. Yaw is not
/// observable from acceleration and is not returned.
RollPitch roll_pitch_from_accel(const Vec3& accel);

RotationMatrix rot_x(double angle);
RotationMatrix rot_y(double angle);
RotationMatrix rot_z(double angle);

RotationMatrix euler_to_rotation(const EulerAngles& e);
/// Inverse of euler_to_rotation. At gimbal lock (|theta_y| = pi/2) theta_x is set to 0.
EulerAngles rotation_to_euler(const RotationMatrix& r);

/// Throws DegenerateInput for a zero quaternion; otherwise normalizes first.
RotationMatrix quat_to_rotation(const Quaternion& q);

/// Left-to-right product r[0] * r[1] * ... ; throws InsufficientData when empty.
RotationMatrix compose_chain(std::span<const RotationMatrix> rotations);

/// Wrap to (-pi, pi].
double wrap_angle(double angle);

/// Angle of the relative rotation a^T b, in radians.
double geodesic_angle(const RotationMatrix& a, const RotationMatrix& b);

bool is_rotation(const RotationMatrix& r, double tol = 1e-9);

}  // namespace nima
