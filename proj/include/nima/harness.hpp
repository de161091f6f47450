#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "nima/config.hpp"
#include "nima/nima.hpp"
#include "nima/stats.hpp"
#include "nima/tipforce_net.hpp"
#include "nima/tissue_sim.hpp"

namespace nima::harness {

enum class Validation { kFrames, kTipForce, kNoContact, kImpedance };

/// "1", "2", "2b-no-contact" or "3"; throws ConfigError otherwise.
Validation parse_validation(const std::string& name);
const char* to_string(Validation v);

enum class DerivativeSource { kCommand, kDifferentiate };
enum class ForceSource { kSensor, kNetwork };

struct Threshold {
  std::string metric;
  bool is_max = true;  // value <= bound when true, value >= bound otherwise
  double bound = 0.0;
};

struct ExperimentConfig {
  Validation validation = Validation::kImpedance;
  sim::SessionConfig session;
  sim::TissueModel tissue;
  sim::RcmFrictionModel rcm;
  std::size_t gravity_poses = 200;

  tipforce::TrainConfig train;
  double no_contact_duration_s = 10.0;
  std::string model_file;  // trained network; when empty, validation 2b trains one first

  impedance::EngineConfig engine;
  DerivativeSource derivative_source = DerivativeSource::kCommand;
  impedance::DifferentiationOptions differentiation;
  ForceSource force_source = ForceSource::kSensor;
  double release_duration_s = 6.0;
  double linear_session_duration_s = 5.0;

  // optional file inputs of the standalone calibration verbs
  std::string gravity_input;
  std::string correspondence_input;
  std::string dataset_input;

  std::vector<Threshold> thresholds;
};

/// Every key accepted in a configuration file (plus the "max." / "min." threshold prefixes).
const std::set<std::string>& known_keys();

/// Metrics reported by a validation, in output order.
std::vector<std::string> metric_names(Validation v);

std::vector<Threshold> default_thresholds(Validation v);

/// Defaults reproduce the reference setup of the validation; keys in cfg
/// override them. Throws ConfigError on unknown keys, bad values or
/// thresholds naming a metric the validation does not report.
ExperimentConfig make_experiment(Validation v, const KeyValueConfig& cfg);

struct Metric {
  std::string name;
  double value = 0.0;
};

struct CheckResult {
  Threshold threshold;
  double value = 0.0;
  bool pass = false;
};

using Artifact = std::pair<std::string, std::function<void(const std::filesystem::path&)>>;

struct Report {
  Validation validation = Validation::kImpedance;
  std::vector<Metric> metrics;
  std::vector<CheckResult> checks;
  std::array<Histogram, 3> histogram;
  std::vector<Artifact> artifacts;  // file name, writer

  /// Throws ConfigError for an unknown metric.
  double value(const std::string& name) const;
  bool passed() const;
};

Report run_validation(const ExperimentConfig& config);

// Individual stages, also used by the standalone CLI verbs.
gravity::FitReport calibrate_gravity(const ExperimentConfig& config);
frames::Calibration calibrate_frames(const ExperimentConfig& config, frames::CorrespondenceSet* used = nullptr);
tipforce::TrainResult train_tipforce(const ExperimentConfig& config);

void evaluate_thresholds(Report& report, const std::vector<Threshold>& thresholds);

/// metrics.csv, thresholds.csv, residual_histogram.csv (when a histogram was
/// filled) and every artifact.
void emit_report(const std::filesystem::path& dir, const Report& report);

}  // namespace nima::harness
