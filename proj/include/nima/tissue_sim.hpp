#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nima/frame_calib.hpp"
#include "nima/geometry.hpp"
#include "nima/gravity.hpp"
#include "nima/nima.hpp"
#include "nima/tipforce_net.hpp"

namespace nima::sim {

enum class TissueLaw { kPolynomial, kExponential };

/// Planar soft tissue at z = surface_z_mm with outward normal +z. Positions
/// handed to identification are expressed relative to this contact origin.
struct TissueModel {
  double surface_z_mm = 0.0;
  TissueLaw law = TissueLaw::kPolynomial;
  double k1 = 0.3;             // N/mm
  double k2 = 0.0;             // N/mm^2
  double k3 = 0.05;            // N/mm^3
  double damping = 0.002;      // N s/mm, normal
  double damping_onset_mm = 0.05;  // damping ramps in linearly over this depth
  double shear_damping = 0.0;  // N s/mm, opposes tangential sliding, same onset ramp
  double exp_gain = 0.3;       // N, exponential law: gain * (exp(d / length) - 1)
  double exp_length_mm = 2.0;

  /// Normal force magnitude on the tool; zero out of contact and never adhesive.
  double normal_force(double penetration_mm, double penetration_rate_mm_s) const;
  /// Force on the tool tip in the world frame.
  Vec3 force(const Vec3& tip_mm, const Vec3& tip_velocity_mm_s) const;
};

/// Force on the tool along the contact normal: zero for penetration <= 0,
/// otherwise elastic + damping, clamped so it never pulls the tool in.
Vec3 contact_force(const TissueModel& model, double penetration_mm, double penetration_rate_mm_s);

/// Smoothed Coulomb plus viscous friction at the remote centre of motion, acting
/// along the shaft against its sliding velocity. Gain grows with shaft tilt.
struct RcmFrictionModel {
  bool enabled = true;
  Vec3 pivot_mm = Vec3(70.0, 0.0, 60.0);
  double coulomb_n = 0.4;
  double viscous = 0.004;        // N s/mm
  double orientation_gain = 0.5;
  double smoothing_mm_s = 2.0;

  /// shaft_dir points from the pivot to the tip (unit).
  Vec3 force(const Vec3& shaft_dir, const Vec3& tip_velocity_mm_s) const;
};

enum class TrajectoryKind { kIndentation, kPegTransfer, kReleaseTest, kNoContact };

struct SessionConfig {
  TrajectoryKind trajectory = TrajectoryKind::kIndentation;
  double duration_s = 30.0;
  double command_rate_hz = 1000.0;
  double force_rate_hz = 2000.0;
  double delay_ms = 300.0;
  double noise_sd_n = 0.03;
  std::uint64_t seed = 1;
  EulerAngles tissue_sensor_orientation{0.0872664626, -0.1745329252, 0.5235987756};  // world <- S2
  EulerAngles camera_orientation{0.1745329252, -0.3490658504, 0.6108652382};         // world <- camera
  double tissue_clock_offset_ms = 0.0;
  double gravity_bias_n = 0.0;  // scale of the orientation-dependent S1 bias, 0 disables

  /// Throws ConfigError on non-positive rates, duration or delay, or negative noise.
  void validate() const;
};

/// Leader-side command sample (1 kHz clock).
struct Command {
  double t_ms = 0.0;
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  Vec3 acc = Vec3::Zero();
  Quaternion q;  // tool orientation, world <- S1
};

/// Follower-side sample on the force-sensor clock.
struct FollowerSample {
  double t_ms = 0.0;
  Vec3 pos = Vec3::Zero();  // executed tip position (command delayed)
  Vec3 vel = Vec3::Zero();
  Quaternion q;
  Vec3 f3_world = Vec3::Zero();   // tissue on tool tip
  Vec3 f2_world = Vec3::Zero();   // RCM friction on tool
  Vec3 f1_world = Vec3::Zero();   // robot on tool, -(f2 + f3)
  Vec3 f1_sensor = Vec3::Zero();  // S1 reading: f1 in S1 + bias + noise
  Vec3 f3_s1 = Vec3::Zero();      // noiseless tip force in S1
  double tissue_t_ms = 0.0;
  Vec3 tissue_sensor = Vec3::Zero();  // S2 reading of the tissue-on-tool force + noise
  Vec3 accel_s1 = Vec3::Zero();       // IMU specific force in S1, m/s^2
  double penetration_mm = 0.0;
};

struct SessionLog {
  SessionConfig config;
  std::vector<Command> commands;
  std::vector<FollowerSample> follower;
  RotationMatrix world_from_s2 = RotationMatrix::Identity();
  RotationMatrix world_from_camera = RotationMatrix::Identity();
  gravity::Model gravity_bias;

  /// Ground-truth unknown of frame calibration (camera <- S2).
  RotationMatrix camera_from_s2() const { return world_from_camera.transpose() * world_from_s2; }
};

/// Analytic C2 command trajectory (positions, derivatives and orientation).
std::vector<Command> generate_trajectory(const SessionConfig& config, const RcmFrictionModel& rcm);

/// Release-test timing: the handle starts decelerating at release_s, comes to
/// rest within ramp_s and starts moving again at resume_s.
struct ReleasePhase {
  double release_s;
  double resume_s;
  double ramp_s;
};
ReleasePhase release_phase(double duration_s);

/// Tool orientation for a tip position: S1 z axis along the shaft towards the
/// pivot, rolled by roll_rad about it.
Quaternion tool_orientation(const Vec3& tip_mm, const Vec3& pivot_mm, double roll_rad);

SessionLog run_session(const SessionConfig& config, const TissueModel& tissue, const RcmFrictionModel& rcm);

/// Orientation-dependent S1 bias used by the simulator, scaled by gravity_bias_n.
gravity::Model gravity_bias_model(double scale_n);

// Views of a session in the formats consumed by the processing modules.

/// For every command whose delayed execution lies inside the log, the index of
/// the follower sample executing it.
std::vector<std::size_t> aligned_indices(const SessionLog& log);

/// Motion on the command clock for commands whose follower force lies inside the log.
impedance::MotionStream command_motion(const SessionLog& log);
/// Follower forces (world frame) interpolated onto the command clock, shifted by the delay.
/// `which` selects the noisy tissue-sensor reading rotated into the world frame, or the true F3.
enum class ForceView { kTissueSensorWorld, kTrueTipWorld };
std::vector<Vec3> aligned_tip_forces(const SessionLog& log, ForceView which);

/// Static calibration sweep: random poses, no contact, S1 readings with bias + noise.
gravity::CalibrationSet gravity_sweep(const SessionConfig& config, std::size_t poses);

/// Dual-sensor correspondence on the force clock; f_robot is the reaction -F1
/// measured by S1 (bias removed with `bias` when provided).
frames::CorrespondenceSet correspondence_set(const SessionLog& log, const gravity::Model* bias = nullptr);

/// (F1, q, F3) rows on the command clock, F3 being the tissue-sensor reading
/// mapped into S1 through the known frame chain.
tipforce::Dataset tipforce_dataset(const SessionLog& log);

/// Writes commands.csv, follower.csv, tip_stream.csv, correspondence.csv and
/// tipforce_dataset.csv into dir.
void write_session(const std::filesystem::path& dir, const SessionLog& log);

const char* to_string(TrajectoryKind kind);
TrajectoryKind parse_trajectory(const std::string& name);

}  // namespace nima::sim
