#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "nima/geometry.hpp"

namespace nima::tipforce {

/// One row of the 10-column dataset: robot-side force, tool orientation, tip force.
struct Sample {
  Vec3 f1 = Vec3::Zero();
  Quaternion q;
  Vec3 f3 = Vec3::Zero();
};

using Dataset = std::vector<Sample>;

inline constexpr std::size_t kInputs = 7;
inline constexpr std::size_t kOutputs = 3;
inline constexpr std::size_t kMinTrainingRows = 1000;

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Fully connected tanh network with linear output and fixed input/output
/// normalization. Immutable once trained; predict() is const and reentrant.
class Mlp {
public:
  Mlp() = default;
  /// Random tanh-scaled weights, zero output layer, identity normalization.
  Mlp(const std::vector<int>& layer_sizes, std::uint64_t seed);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Eigen::VectorXd input_mean = Eigen::VectorXd::Zero(kInputs);
  Eigen::VectorXd input_scale = Eigen::VectorXd::Ones(kInputs);
  Eigen::VectorXd output_mean = Eigen::VectorXd::Zero(kOutputs);
  Eigen::VectorXd output_scale = Eigen::VectorXd::Ones(kOutputs);

  /// Physical units in and out. Throws DataError on non-finite input.
  Vec3 predict(const Vec3& f1, const Quaternion& q) const;

  /// Normalized-space forward pass; columns are samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  std::size_t parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& p);

  /// 0.5 * mean squared error in normalized output space.
  double loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const;
  /// Analytic gradient of loss() with respect to parameters(), by backpropagation.
  Eigen::VectorXd gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const;

  Eigen::VectorXd normalize_input(const Vec3& f1, const Quaternion& q) const;

  void save(const std::filesystem::path& path) const;
  static Mlp load(const std::filesystem::path& path);

private:
  std::vector<int> sizes_;
  std::vector<Layer> layers_;
};

enum class Optimizer { kMomentum, kFullBatchLineSearch };

struct TrainConfig {
  std::vector<int> hidden{64, 64};
  int max_epochs = 2000;
  int batch_size = 128;       // ignored by the full-batch optimizer
  double learning_rate = 0.02;
  double momentum = 0.9;
  int patience = 20;          // epochs without validation improvement
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
  bool augment_quaternion_sign = true;
  Optimizer optimizer = Optimizer::kMomentum;
  std::uint64_t seed = 7;
};

struct TrainReport {
  std::vector<double> train_loss;      // per epoch, normalized space
  std::vector<double> validation_mae;  // per epoch, N (mean over axes)
  int best_epoch = 0;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
  std::size_t test_rows = 0;
  Vec3 test_mae = Vec3::Zero();
  Vec3 test_sd = Vec3::Zero();
};

struct TrainResult {
  Mlp model;
  TrainReport report;
};

/// Trains on contiguous blocks (train / validation / test, in that order).
/// Throws InsufficientData, DataError or TrainingFailure.
TrainResult train(const Dataset& data, const TrainConfig& config);

/// Signed errors of predict() against f3 on a dataset, for reporting.
std::vector<Vec3> prediction_errors(const Mlp& model, const Dataset& data);

struct FrictionDiagnostics {
  Vec3 rcm_force = Vec3::Zero();  // implied F2 = -(F1 + F3_predicted)
  Vec3 tip_error = Vec3::Zero();  // F3_predicted - F3_true
};

FrictionDiagnostics residual_friction(const Mlp& model, const Vec3& f1, const Quaternion& q, const Vec3& f3_true);

// f1x,f1y,f1z,qw,qx,qy,qz,f3x,f3y,f3z
Dataset read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const Dataset& data);

}  // namespace nima::tipforce
