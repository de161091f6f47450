#pragma once

#include <filesystem>
#include <vector>

#include "nima/geometry.hpp"
#include "nima/stats.hpp"

namespace nima::frames {

/// One paired sample: the robot-side force in S1, the tissue-side force in S2,
/// and the known part of the rotation chain from the camera frame to S1.
struct Correspondence {
  double t_ms = 0.0;
  Vec3 f_robot = Vec3::Zero();
  Vec3 f_tip = Vec3::Zero();
  RotationMatrix chain = RotationMatrix::Identity();
};

using CorrespondenceSet = std::vector<Correspondence>;

struct Calibration {
  RotationMatrix rotation = RotationMatrix::Identity();  // camera <- S2
  EulerAngles euler;
  Vec3 mae = Vec3::Zero();
  Vec3 sd = Vec3::Zero();
  Vec3 r2 = Vec3::Ones();
  double residual_rms = 0.0;  // N, over all components
  int iterations = 0;
};

struct SolverOptions {
  int max_iterations = 200;
  double step_tolerance = 1e-10;  // rad
};

/// Rotation minimising sum |chain_i R f_tip_i - f_robot_i|^2 over Euler angles,
/// multi-started from eight coarse rotations.
/// Throws InsufficientData (n < 3), DegenerateInput (collinear forces) or
/// ConvergenceError.
Calibration estimate_rotation(const CorrespondenceSet& set, const SolverOptions& options = {});

/// Sum of squared residuals for a candidate rotation.
double objective(const CorrespondenceSet& set, const RotationMatrix& rotation);

/// Tip forces expressed in S1: chain_i * rotation * f_tip_i.
std::vector<Vec3> transform_tip_forces(const Calibration& calib, const CorrespondenceSet& set);

/// Per-axis MAE, SD and R^2 of transformed tip forces against robot forces.
/// Throws InsufficientData on an empty set.
AxisReport evaluate_correspondence(const Calibration& calib, const CorrespondenceSet& set);

struct TimedForce {
  double t_ms = 0.0;
  Vec3 force = Vec3::Zero();
};

/// Nearest-timestamp pairing of two sorted streams; samples of `a` with no
/// partner within max_skew_ms are dropped. Returns index pairs (a, b).
std::vector<std::pair<std::size_t, std::size_t>> align_by_timestamp(const std::vector<TimedForce>& a,
                                                                   const std::vector<TimedForce>& b,
                                                                   double max_skew_ms = 1.0);

// t_ms,frx,fry,frz,ftx,fty,ftz,c11..c33
CorrespondenceSet read_correspondence(const std::filesystem::path& path);
void write_correspondence(const std::filesystem::path& path, const CorrespondenceSet& set);
// theta_x,theta_y,theta_z,r11..r33,mae_*,sd_*,r2_*
void write_calibration(const std::filesystem::path& path, const Calibration& calib);
Calibration read_calibration(const std::filesystem::path& path);

}  // namespace nima::frames
