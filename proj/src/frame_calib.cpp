#include "nima/frame_calib.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "nima/csv.hpp"
#include "nima/error.hpp"

namespace nima::frames {

namespace {

std::vector<std::string> correspondence_header() {
  std::vector<std::string> h{"t_ms", "frx", "fry", "frz", "ftx", "fty", "ftz"};
  for (int i = 1; i <= 3; ++i) {
    for (int j = 1; j <= 3; ++j) {
      h.push_back("c" + std::to_string(i) + std::to_string(j));
    }
  }
  return h;
}

std::vector<std::string> calibration_header() {
  std::vector<std::string> h{"theta_x", "theta_y", "theta_z"};
  for (int i = 1; i <= 3; ++i) {
    for (int j = 1; j <= 3; ++j) {
      h.push_back("r" + std::to_string(i) + std::to_string(j));
    }
  }
  for (const char* p : {"mae_", "sd_", "r2_"}) {
    for (const char* a : {"x", "y", "z"}) {
      h.push_back(std::string(p) + a);
    }
  }
  return h;
}

// Partial derivatives of Rz(z) Ry(y) Rx(x) with respect to (x, y, z).
std::array<RotationMatrix, 3> rotation_jacobian(const EulerAngles& e) {
  const double cx = std::cos(e.theta_x), sx = std::sin(e.theta_x);
  const double cy = std::cos(e.theta_y), sy = std::sin(e.theta_y);
  const double cz = std::cos(e.theta_z), sz = std::sin(e.theta_z);
  RotationMatrix dx, dy, dz;
  dx << 0, 0, 0, 0, -sx, -cx, 0, cx, -sx;
  dy << -sy, 0, cy, 0, 0, 0, -cy, 0, -sy;
  dz << -sz, -cz, 0, cz, -sz, 0, 0, 0, 0;
  const RotationMatrix rx = rot_x(e.theta_x), ry = rot_y(e.theta_y), rz = rot_z(e.theta_z);
  return {rz * ry * dx, rz * dy * rx, dz * ry * rx};
}

struct LocalResult {
  EulerAngles angles;
  double cost = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

LocalResult levenberg_marquardt(const CorrespondenceSet& set, EulerAngles start, const SolverOptions& opt) {
  LocalResult res;
  res.angles = start;
  res.cost = objective(set, euler_to_rotation(start));
  double lambda = 1e-3;

  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it + 1;
    const RotationMatrix r = euler_to_rotation(res.angles);
    const auto d = rotation_jacobian(res.angles);
    Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
    Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
    for (const auto& c : set) {
      const Vec3 resid = c.chain * r * c.f_tip - c.f_robot;
      Eigen::Matrix3d j;
      for (int k = 0; k < 3; ++k) {
        j.col(k) = c.chain * d[static_cast<std::size_t>(k)] * c.f_tip;
      }
      jtj += j.transpose() * j;
      jtr += j.transpose() * resid;
    }

    bool accepted = false;
    Eigen::Vector3d step = Eigen::Vector3d::Zero();
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::Matrix3d damped = jtj;
      damped.diagonal() += lambda * (jtj.diagonal().array() + 1e-12).matrix();
      step = -damped.ldlt().solve(jtr);
      EulerAngles trial{res.angles.theta_x + step(0), res.angles.theta_y + step(1), res.angles.theta_z + step(2)};
      const double trial_cost = objective(set, euler_to_rotation(trial));
      if (trial_cost <= res.cost) {
        res.angles = trial;
        res.cost = trial_cost;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
      if (step.norm() < opt.step_tolerance) {
        break;
      }
    }
    if (step.norm() < opt.step_tolerance) {
      res.converged = true;
      break;
    }
    if (!accepted) {
      // no descent direction left at machine precision
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace

double objective(const CorrespondenceSet& set, const RotationMatrix& rotation) {
  double s = 0.0;
  for (const auto& c : set) {
    s += (c.chain * rotation * c.f_tip - c.f_robot).squaredNorm();
  }
  return s;
}

Calibration estimate_rotation(const CorrespondenceSet& set, const SolverOptions& options) {
  if (set.size() < 3) {
    throw InsufficientData("frame calibration needs at least 3 correspondences, got " + std::to_string(set.size()));
  }
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& c : set) {
    if (!c.f_robot.allFinite() || !c.f_tip.allFinite() || !c.chain.allFinite()) {
      throw DataError("frame calibration: non-finite correspondence at t=" + std::to_string(c.t_ms));
    }
    scatter += c.f_tip * c.f_tip.transpose();
  }
  const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(scatter).eigenvalues();
  if (!(ev(2) > 0.0) || ev(1) < 1e-10 * ev(2)) {
    throw DegenerateInput("frame calibration: tip forces are collinear, rotation about their axis is unobservable");
  }

  constexpr double pi = std::numbers::pi;
  LocalResult best;
  bool any_converged = false;
  for (double tx : {-pi / 2, pi / 2}) {
    for (double tz : {-3 * pi / 4, -pi / 4, pi / 4, 3 * pi / 4}) {
      LocalResult r = levenberg_marquardt(set, {tx, 0.0, tz}, options);
      any_converged = any_converged || r.converged;
      if (r.cost < best.cost) {
        best = r;
      }
    }
  }
  if (!any_converged) {
    throw ConvergenceError("frame calibration did not converge in " + std::to_string(options.max_iterations) +
                               " iterations",
                           std::sqrt(best.cost / (3.0 * static_cast<double>(set.size()))));
  }

  Calibration calib;
  calib.euler = {wrap_angle(best.angles.theta_x), wrap_angle(best.angles.theta_y), wrap_angle(best.angles.theta_z)};
  calib.rotation = euler_to_rotation(calib.euler);
  calib.iterations = best.iterations;
  calib.residual_rms = std::sqrt(objective(set, calib.rotation) / (3.0 * static_cast<double>(set.size())));
  const AxisReport rep = evaluate_correspondence(calib, set);
  calib.mae = rep.mae;
  calib.sd = rep.sd;
  calib.r2 = rep.r2;
  return calib;
}

std::vector<Vec3> transform_tip_forces(const Calibration& calib, const CorrespondenceSet& set) {
  std::vector<Vec3> out;
  out.reserve(set.size());
  for (const auto& c : set) {
    out.push_back(c.chain * calib.rotation * c.f_tip);
  }
  return out;
}

AxisReport evaluate_correspondence(const Calibration& calib, const CorrespondenceSet& set) {
  if (set.empty()) {
    throw InsufficientData("evaluate_correspondence: empty set");
  }
  const std::vector<Vec3> est = transform_tip_forces(calib, set);
  std::vector<Vec3> ref;
  ref.reserve(set.size());
  for (const auto& c : set) {
    ref.push_back(c.f_robot);
  }
  return compare_streams(est, ref);
}

std::vector<std::pair<std::size_t, std::size_t>> align_by_timestamp(const std::vector<TimedForce>& a,
                                                                   const std::vector<TimedForce>& b,
                                                                   double max_skew_ms) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (b.empty()) {
    return out;
  }
  std::size_t j = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i].t_ms;
    while (j + 1 < b.size() && std::abs(b[j + 1].t_ms - t) <= std::abs(b[j].t_ms - t)) {
      ++j;
    }
    if (std::abs(b[j].t_ms - t) <= max_skew_ms) {
      out.emplace_back(i, j);
    }
  }
  return out;
}

CorrespondenceSet read_correspondence(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, correspondence_header());
  CorrespondenceSet set;
  set.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    Correspondence c;
    c.t_ms = r[0];
    c.f_robot = Vec3(r[1], r[2], r[3]);
    c.f_tip = Vec3(r[4], r[5], r[6]);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        c.chain(i, j) = r[static_cast<std::size_t>(7 + 3 * i + j)];
      }
    }
    set.push_back(c);
  }
  return set;
}

void write_correspondence(const std::filesystem::path& path, const CorrespondenceSet& set) {
  CsvWriter w(path, correspondence_header());
  std::vector<double> row(16);
  for (const auto& c : set) {
    row[0] = c.t_ms;
    for (int k = 0; k < 3; ++k) {
      row[static_cast<std::size_t>(1 + k)] = c.f_robot(k);
      row[static_cast<std::size_t>(4 + k)] = c.f_tip(k);
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        row[static_cast<std::size_t>(7 + 3 * i + j)] = c.chain(i, j);
      }
    }
    w.row(row);
  }
  w.close();
}

void write_calibration(const std::filesystem::path& path, const Calibration& calib) {
  std::vector<double> row{calib.euler.theta_x, calib.euler.theta_y, calib.euler.theta_z};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      row.push_back(calib.rotation(i, j));
    }
  }
  for (const Vec3* v : {&calib.mae, &calib.sd, &calib.r2}) {
    for (int k = 0; k < 3; ++k) {
      row.push_back((*v)(k));
    }
  }
  write_csv(path, calibration_header(), {row});
}

Calibration read_calibration(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, calibration_header());
  if (t.rows.size() != 1) {
    throw DataError(path.string() + ": calibration file must hold exactly one row");
  }
  const auto& r = t.rows.front();
  Calibration c;
  c.euler = {r[0], r[1], r[2]};
  c.rotation = euler_to_rotation(c.euler);
  for (int k = 0; k < 3; ++k) {
    c.mae(k) = r[static_cast<std::size_t>(12 + k)];
    c.sd(k) = r[static_cast<std::size_t>(15 + k)];
    c.r2(k) = r[static_cast<std::size_t>(18 + k)];
  }
  return c;
}

}  // namespace nima::frames
