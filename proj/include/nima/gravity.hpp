#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "nima/geometry.hpp"

namespace nima::gravity {

struct CalibrationRecord {
  double alpha = 0.0;  // rad
  double beta = 0.0;   // rad
  Vec3 force = Vec3::Zero();  // N, raw sensor reading
};

using CalibrationSet = std::vector<CalibrationRecord>;

/// Orientation-dependent bias model: bias = [sin a, cos a, sin b, cos b, 1] * coefficients.
struct Model {
  Eigen::Matrix<double, 5, 3> coefficients = Eigen::Matrix<double, 5, 3>::Zero();

  Vec3 predict(double alpha, double beta) const;
};

struct FitReport {
  Model model;
  Vec3 residual_rms = Vec3::Zero();  // per axis, N
  double condition = 0.0;            // of the design matrix
};

/// Largest design-matrix condition number accepted by fit().
inline constexpr double kMaxCondition = 1e8;

Eigen::RowVectorXd features(double alpha, double beta);

/// n x 5 design matrix. Throws InsufficientData when fewer than 5 records.
Eigen::MatrixXd build_design_matrix(const CalibrationSet& set);

/// Least-squares fit of the bias coefficients. Throws SingularSystem when the
/// calibration poses do not excite all five regressors.
FitReport fit(const CalibrationSet& set);

/// raw - predicted bias.
Vec3 compensate(const Model& model, double alpha, double beta, const Vec3& raw);

// alpha_rad,beta_rad,fx_N,fy_N,fz_N
CalibrationSet read_calibration_set(const std::filesystem::path& path);
void write_calibration_set(const std::filesystem::path& path, const CalibrationSet& set);
// cx,cy,cz with five rows
Model read_model(const std::filesystem::path& path);
void write_model(const std::filesystem::path& path, const Model& model);

}  // namespace nima::gravity
