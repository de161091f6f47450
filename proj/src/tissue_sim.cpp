#include "nima/tissue_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Geometry>

#include "nima/csv.hpp"
#include "nima/error.hpp"

namespace nima::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kGravity = 9.81;

struct Sine {
  double amp;
  double hz;
  double phase;
};

struct Scalar3 {
  double v = 0.0, d = 0.0, dd = 0.0;
};

Scalar3 sum_sines(const std::vector<Sine>& terms, double t) {
  Scalar3 r;
  for (const auto& s : terms) {
    const double w = kTwoPi * s.hz;
    const double arg = w * t + s.phase;
    r.v += s.amp * std::sin(arg);
    r.d += s.amp * w * std::cos(arg);
    r.dd -= s.amp * w * w * std::sin(arg);
  }
  return r;
}

// quintic smoothstep and its integral
double smooth(double u) { return u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }
double smooth_d(double u) { return 30.0 * u * u * (1.0 - u) * (1.0 - u); }
double smooth_int(double u) { return u * u * u * u * (2.5 + u * (-3.0 + u)); }

struct TrajState {
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  Vec3 acc = Vec3::Zero();
  double roll = 0.0;
};

class Trajectory {
public:
  Trajectory(const SessionConfig& config) : kind_(config.trajectory), duration_(config.duration_s) {
    std::mt19937_64 rng(config.seed ^ 0x5eedu);
    std::uniform_real_distribution<double> depth(0.5, 5.0);
    const auto episodes = static_cast<std::size_t>(std::ceil(duration_ / kPegPeriod)) + 1;
    for (std::size_t i = 0; i < episodes; ++i) depths_.push_back(depth(rng));

    roll_ = {{0.8, 0.23, 0.0}, {0.4, 0.71, 1.0}};
    switch (kind_) {
      case TrajectoryKind::kIndentation:
      case TrajectoryKind::kReleaseTest:
        axes_[0] = {{10.0, 0.7, 0.0}, {4.0, 1.9, 0.3}, {2.0, 3.7, 1.0}};
        axes_[1] = {{10.0, 0.53, 1.0}, {4.0, 2.3, 2.0}, {2.0, 4.1, 0.5}};
        axes_[2] = {{1.5, 1.7, 0.0}, {0.75, 3.1, 1.0}};
        z_offset_ = -2.75;
        break;
      case TrajectoryKind::kPegTransfer:
        axes_[0] = {{12.0, 0.31, 0.0}, {3.0, 1.3, 0.7}};
        axes_[1] = {{12.0, 0.23, 1.2}, {3.0, 1.1, 2.1}};
        break;
      case TrajectoryKind::kNoContact:
        axes_[0] = {{12.0, 0.31, 0.0}, {3.0, 1.3, 0.7}};
        axes_[1] = {{12.0, 0.23, 1.2}, {3.0, 1.1, 2.1}};
        axes_[2] = {{3.0, 0.9, 0.0}, {1.0, 2.1, 0.4}};
        z_offset_ = 6.0;
        break;
    }
  }

  TrajState operator()(double t) const {
    if (kind_ != TrajectoryKind::kReleaseTest) return base(t);
    // time warp: the handle decelerates to rest, is held, then resumes
    const ReleasePhase ph = release_phase(duration_);
    const double ts = ph.ramp_s;
    const double t1 = ph.release_s;
    const double t2 = ph.resume_s;
    double phi = t, sigma = 1.0, sigma_d = 0.0;
    if (t >= t1 && t < t1 + ts) {
      const double u = (t - t1) / ts;
      phi = t1 + ts * (u - smooth_int(u));
      sigma = 1.0 - smooth(u);
      sigma_d = -smooth_d(u) / ts;
    } else if (t >= t1 + ts && t < t2) {
      phi = t1 + 0.5 * ts;
      sigma = 0.0;
    } else if (t >= t2 && t < t2 + ts) {
      const double u = (t - t2) / ts;
      phi = t1 + 0.5 * ts + ts * smooth_int(u);
      sigma = smooth(u);
      sigma_d = smooth_d(u) / ts;
    } else if (t >= t2 + ts) {
      phi = t1 + 0.5 * ts + 0.5 * ts + (t - t2 - ts);
    }
    TrajState b = base(phi);
    TrajState r;
    r.pos = b.pos;
    r.vel = b.vel * sigma;
    r.acc = b.acc * sigma * sigma + b.vel * sigma_d;
    r.roll = b.roll;
    return r;
  }

private:
  static constexpr double kPegPeriod = 1.6;

  TrajState base(double t) const {
    TrajState s;
    for (int a = 0; a < 3; ++a) {
      const Scalar3 v = sum_sines(axes_[static_cast<std::size_t>(a)], t);
      s.pos[a] = v.v;
      s.vel[a] = v.d;
      s.acc[a] = v.dd;
    }
    s.pos.z() += z_offset_;
    if (kind_ == TrajectoryKind::kPegTransfer) {
      const Scalar3 z = peg_z(t);
      s.pos.z() += z.v;
      s.vel.z() += z.d;
      s.acc.z() += z.dd;
    }
    s.roll = sum_sines(roll_, t).v;
    return s;
  }

  // hover above the tissue, dipping once per period to an episode-specific depth
  Scalar3 peg_z(double t) const {
    constexpr double hover = 3.0;
    const double k = std::floor(t / kPegPeriod);
    const double tau = t / kPegPeriod - k;
    const double depth = depths_[std::min(depths_.size() - 1, static_cast<std::size_t>(std::max(0.0, k)))];
    Scalar3 r;
    r.v = hover;
    constexpr double lo = 0.1, hi = 0.9;
    if (tau <= lo || tau >= hi) return r;
    const double w = std::numbers::pi / ((hi - lo) * kPegPeriod);
    const double x = std::numbers::pi * (tau - lo) / (hi - lo);
    const double sn = std::sin(x), cs = std::cos(x);
    const double b = sn * sn * sn * sn;
    const double bd = 4.0 * sn * sn * sn * cs * w;
    const double bdd = (12.0 * sn * sn * cs * cs - 4.0 * sn * sn * sn * sn) * w * w;
    const double amp = hover + depth;
    r.v = hover - amp * b;
    r.d = -amp * bd;
    r.dd = -amp * bdd;
    return r;
  }

  TrajectoryKind kind_;
  double duration_;
  std::array<std::vector<Sine>, 3> axes_;
  std::vector<Sine> roll_;
  double z_offset_ = 0.0;
  std::vector<double> depths_;
};

Vec3 gaussian3(std::mt19937_64& rng, double sd) {
  if (sd == 0.0) return Vec3::Zero();
  std::normal_distribution<double> n(0.0, sd);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return {x, y, z};
}

}  // namespace

ReleasePhase release_phase(double duration_s) { return {0.35 * duration_s, 0.7 * duration_s, 0.2}; }

double TissueModel::normal_force(double d, double rate) const {
  if (!(d > 0.0)) return 0.0;
  double elastic = 0.0;
  if (law == TissueLaw::kPolynomial) {
    elastic = k1 * d + k2 * d * d + k3 * d * d * d;
  } else {
    elastic = exp_gain * (std::exp(d / exp_length_mm) - 1.0);
  }
  const double ramp = damping_onset_mm > 0.0 ? std::min(1.0, d / damping_onset_mm) : 1.0;
  return std::max(0.0, elastic + damping * ramp * rate);
}

Vec3 TissueModel::force(const Vec3& tip, const Vec3& vel) const {
  const double d = surface_z_mm - tip.z();
  if (!(d > 0.0)) return Vec3::Zero();
  const double ramp = damping_onset_mm > 0.0 ? std::min(1.0, d / damping_onset_mm) : 1.0;
  return {-shear_damping * ramp * vel.x(), -shear_damping * ramp * vel.y(), normal_force(d, -vel.z())};
}

Vec3 contact_force(const TissueModel& model, double penetration_mm, double rate) {
  return {0.0, 0.0, model.normal_force(penetration_mm, rate)};
}

Vec3 RcmFrictionModel::force(const Vec3& shaft_dir, const Vec3& vel) const {
  if (!enabled) return Vec3::Zero();
  const double v_ax = vel.dot(shaft_dir);
  const double cos_tilt = -shaft_dir.z();
  const double gain = 1.0 + orientation_gain * (1.0 - cos_tilt * cos_tilt);
  const double mag = gain * (coulomb_n * std::tanh(v_ax / smoothing_mm_s) + viscous * v_ax);
  return -mag * shaft_dir;
}

void SessionConfig::validate() const {
  if (!(duration_s > 0.0)) throw ConfigError("duration_s must be positive");
  if (!(command_rate_hz > 0.0) || !(force_rate_hz > 0.0)) throw ConfigError("sample rates must be positive");
  if (!(delay_ms > 0.0)) throw ConfigError("delay_ms must be positive");
  if (!(noise_sd_n >= 0.0)) throw ConfigError("noise_sd_n must be >= 0");
  if (!(gravity_bias_n >= 0.0)) throw ConfigError("gravity_bias_n must be >= 0");
  if (!(tissue_clock_offset_ms >= 0.0)) throw ConfigError("tissue_clock_offset_ms must be >= 0");
}

Quaternion tool_orientation(const Vec3& tip, const Vec3& pivot, double roll) {
  const Vec3 axis = pivot - tip;
  if (axis.norm() == 0.0) throw DegenerateInput("tool tip coincides with the pivot");
  const Eigen::Quaterniond align = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), axis.normalized());
  return Quaternion::from_rotation(align.toRotationMatrix() * rot_z(roll));
}

gravity::Model gravity_bias_model(double scale) {
  gravity::Model m;
  m.coefficients << 0.0, 0.8, 0.1,
                    0.1, 0.0, 0.6,
                    0.7, 0.0, -0.2,
                    0.0, 0.1, 0.5,
                    0.05, -0.1, 0.2;
  m.coefficients *= scale;
  return m;
}

std::vector<Command> generate_trajectory(const SessionConfig& config, const RcmFrictionModel& rcm) {
  config.validate();
  const Trajectory traj(config);
  const auto n = static_cast<std::size_t>(std::floor(config.duration_s * config.command_rate_hz + 1e-9));
  std::vector<Command> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double t = static_cast<double>(j) / config.command_rate_hz;
    const TrajState s = traj(t);
    Command c;
    c.t_ms = t * 1000.0;
    c.pos = s.pos;
    c.vel = s.vel;
    c.acc = s.acc;
    c.q = tool_orientation(s.pos, rcm.pivot_mm, s.roll);
    out.push_back(c);
  }
  return out;
}

SessionLog run_session(const SessionConfig& config, const TissueModel& tissue, const RcmFrictionModel& rcm) {
  config.validate();
  SessionLog log;
  log.config = config;
  log.commands = generate_trajectory(config, rcm);
  log.world_from_s2 = euler_to_rotation(config.tissue_sensor_orientation);
  log.world_from_camera = euler_to_rotation(config.camera_orientation);
  log.gravity_bias = gravity_bias_model(config.gravity_bias_n);

  const Trajectory traj(config);
  std::mt19937_64 rng(config.seed);
  const double end_s = config.duration_s + config.delay_ms / 1000.0;
  const auto n = static_cast<std::size_t>(std::floor(end_s * config.force_rate_hz + 1e-9));
  log.follower.reserve(n);

  auto executed = [&](double t_s) {
    const double tau = t_s - config.delay_ms / 1000.0;
    TrajState s = traj(std::max(0.0, tau));
    if (tau < 0.0) {
      s.vel.setZero();
      s.acc.setZero();
    }
    return s;
  };

  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / config.force_rate_hz;
    const TrajState s = executed(t);
    FollowerSample f;
    f.t_ms = t * 1000.0;
    f.pos = s.pos;
    f.vel = s.vel;
    f.q = tool_orientation(s.pos, rcm.pivot_mm, s.roll);
    const RotationMatrix r = quat_to_rotation(f.q);
    const Vec3 shaft = (s.pos - rcm.pivot_mm).normalized();
    f.f3_world = tissue.force(s.pos, s.vel);
    f.f2_world = rcm.force(shaft, s.vel);
    f.f1_world = -(f.f2_world + f.f3_world);
    f.penetration_mm = tissue.surface_z_mm - s.pos.z();
    f.accel_s1 = r.transpose() * Vec3(0.0, 0.0, kGravity);
    const RollPitch rp = roll_pitch_from_accel(f.accel_s1);
    f.f3_s1 = r.transpose() * f.f3_world;
    f.f1_sensor = r.transpose() * f.f1_world + log.gravity_bias.predict(rp.alpha, rp.beta) +
                  gaussian3(rng, config.noise_sd_n);

    f.tissue_t_ms = f.t_ms + config.tissue_clock_offset_ms;
    Vec3 f3_tissue_clock = f.f3_world;
    if (config.tissue_clock_offset_ms != 0.0) {
      const TrajState st = executed(f.tissue_t_ms / 1000.0);
      f3_tissue_clock = tissue.force(st.pos, st.vel);
    }
    f.tissue_sensor = log.world_from_s2.transpose() * f3_tissue_clock + gaussian3(rng, config.noise_sd_n);
    log.follower.push_back(f);
  }
  return log;
}

namespace {

// follower index executing command j, or npos when outside the log
std::size_t follower_index(const SessionLog& log, const Command& c) {
  const double x = (c.t_ms + log.config.delay_ms) * log.config.force_rate_hz / 1000.0;
  const double k = std::round(x);
  if (std::abs(x - k) > 1e-6) {
    throw ConfigError("force clock does not sample the delayed command instants; use an integer rate ratio");
  }
  if (k < 0.0 || k >= static_cast<double>(log.follower.size())) return static_cast<std::size_t>(-1);
  return static_cast<std::size_t>(k);
}

}  // namespace

std::vector<std::size_t> aligned_indices(const SessionLog& log) {
  std::vector<std::size_t> out;
  out.reserve(log.commands.size());
  for (const auto& c : log.commands) {
    const std::size_t k = follower_index(log, c);
    if (k == static_cast<std::size_t>(-1)) break;
    out.push_back(k);
  }
  return out;
}

impedance::MotionStream command_motion(const SessionLog& log) {
  impedance::MotionStream out;
  out.reserve(log.commands.size());
  for (const auto& c : log.commands) {
    if (follower_index(log, c) == static_cast<std::size_t>(-1)) break;
    impedance::MotionSample m;
    m.t_ms = c.t_ms;
    m.pos = c.pos;
    m.vel = c.vel;
    m.acc = c.acc;
    out.push_back(m);
  }
  return out;
}

std::vector<Vec3> aligned_tip_forces(const SessionLog& log, ForceView which) {
  std::vector<Vec3> out;
  out.reserve(log.commands.size());
  for (const auto& c : log.commands) {
    const std::size_t k = follower_index(log, c);
    if (k == static_cast<std::size_t>(-1)) break;
    const auto& f = log.follower[k];
    out.push_back(which == ForceView::kTrueTipWorld ? f.f3_world : Vec3(log.world_from_s2 * f.tissue_sensor));
  }
  return out;
}

gravity::CalibrationSet gravity_sweep(const SessionConfig& config, std::size_t poses) {
  config.validate();
  const gravity::Model bias = gravity_bias_model(config.gravity_bias_n);
  std::mt19937_64 rng(config.seed ^ 0x9a11u);
  std::uniform_real_distribution<double> roll(-std::numbers::pi, std::numbers::pi), pitch(-1.4, 1.4),
      yaw(-std::numbers::pi, std::numbers::pi);
  gravity::CalibrationSet out;
  out.reserve(poses);
  for (std::size_t i = 0; i < poses; ++i) {
    const double a = roll(rng);
    const double b = pitch(rng);
    const double y = yaw(rng);
    const RotationMatrix r = rot_z(y) * rot_y(b) * rot_x(a);
    const RollPitch rp = roll_pitch_from_accel(r.transpose() * Vec3(0.0, 0.0, kGravity));
    gravity::CalibrationRecord rec;
    rec.alpha = rp.alpha;
    rec.beta = rp.beta;
    rec.force = bias.predict(rp.alpha, rp.beta) + gaussian3(rng, config.noise_sd_n);
    out.push_back(rec);
  }
  return out;
}

frames::CorrespondenceSet correspondence_set(const SessionLog& log, const gravity::Model* bias) {
  frames::CorrespondenceSet out;
  out.reserve(log.follower.size());
  for (const auto& f : log.follower) {
    const RotationMatrix r = quat_to_rotation(f.q);
    Vec3 f1 = f.f1_sensor;
    if (bias != nullptr) {
      const RollPitch rp = roll_pitch_from_accel(f.accel_s1);
      f1 = gravity::compensate(*bias, rp.alpha, rp.beta, f1);
    }
    frames::Correspondence c;
    c.t_ms = f.t_ms;
    c.f_robot = -f1;
    c.f_tip = f.tissue_sensor;
    c.chain = r.transpose() * log.world_from_camera;
    out.push_back(c);
  }
  return out;
}

tipforce::Dataset tipforce_dataset(const SessionLog& log) {
  tipforce::Dataset out;
  out.reserve(log.commands.size());
  for (const auto& c : log.commands) {
    const std::size_t k = follower_index(log, c);
    if (k == static_cast<std::size_t>(-1)) break;
    const auto& f = log.follower[k];
    const RotationMatrix r = quat_to_rotation(f.q);
    tipforce::Sample s;
    s.f1 = f.f1_sensor;
    s.q = f.q;
    s.f3 = r.transpose() * (log.world_from_s2 * f.tissue_sensor);
    out.push_back(s);
  }
  return out;
}

void write_session(const std::filesystem::path& dir, const SessionLog& log) {
  std::filesystem::create_directories(dir);
  {
    CsvWriter w(dir / "commands.csv", {"t_ms", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az", "qw", "qx",
                                       "qy", "qz"});
    for (const auto& c : log.commands) {
      w.row({c.t_ms, c.pos.x(), c.pos.y(), c.pos.z(), c.vel.x(), c.vel.y(), c.vel.z(), c.acc.x(), c.acc.y(),
             c.acc.z(), c.q.w, c.q.x, c.q.y, c.q.z});
    }
    w.close();
  }
  {
    CsvWriter w(dir / "follower.csv",
                {"t_ms", "px", "py", "pz", "qw", "qx", "qy", "qz", "f3w_x", "f3w_y", "f3w_z", "f2w_x", "f2w_y",
                 "f2w_z", "f1_x", "f1_y", "f1_z", "tissue_t_ms", "tissue_x", "tissue_y", "tissue_z", "acc_x",
                 "acc_y", "acc_z"});
    for (const auto& f : log.follower) {
      w.row({f.t_ms, f.pos.x(), f.pos.y(), f.pos.z(), f.q.w, f.q.x, f.q.y, f.q.z, f.f3_world.x(), f.f3_world.y(),
             f.f3_world.z(), f.f2_world.x(), f.f2_world.y(), f.f2_world.z(), f.f1_sensor.x(), f.f1_sensor.y(),
             f.f1_sensor.z(), f.tissue_t_ms, f.tissue_sensor.x(), f.tissue_sensor.y(), f.tissue_sensor.z(),
             f.accel_s1.x(), f.accel_s1.y(), f.accel_s1.z()});
    }
    w.close();
  }
  {
    const auto motion = command_motion(log);
    const auto forces = aligned_tip_forces(log, ForceView::kTissueSensorWorld);
    CsvWriter w(dir / "tip_stream.csv", {"t_ms", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az", "fx", "fy",
                                         "fz"});
    for (std::size_t i = 0; i < motion.size(); ++i) {
      const auto& m = motion[i];
      w.row({m.t_ms, m.pos.x(), m.pos.y(), m.pos.z(), m.vel.x(), m.vel.y(), m.vel.z(), m.acc.x(), m.acc.y(),
             m.acc.z(), forces[i].x(), forces[i].y(), forces[i].z()});
    }
    w.close();
  }
  frames::write_correspondence(dir / "correspondence.csv", correspondence_set(log));
  tipforce::write_dataset(dir / "tipforce_dataset.csv", tipforce_dataset(log));
}

const char* to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kIndentation: return "indentation";
    case TrajectoryKind::kPegTransfer: return "peg-transfer";
    case TrajectoryKind::kReleaseTest: return "release-test";
    case TrajectoryKind::kNoContact: return "no-contact";
  }
  return "?";
}

TrajectoryKind parse_trajectory(const std::string& name) {
  if (name == "indentation") return TrajectoryKind::kIndentation;
  if (name == "peg-transfer") return TrajectoryKind::kPegTransfer;
  if (name == "release-test") return TrajectoryKind::kReleaseTest;
  if (name == "no-contact") return TrajectoryKind::kNoContact;
  throw ConfigError("unknown trajectory '" + name + "'");
}

}  // namespace nima::sim
