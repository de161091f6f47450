#include "nima/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>

#include "nima/csv.hpp"
#include "nima/error.hpp"

namespace nima::harness {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<std::string> axes(const std::string& prefix) { return {prefix + "_x", prefix + "_y", prefix + "_z"}; }

void append(std::vector<std::string>& out, const std::vector<std::string>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

class MetricSink {
public:
  explicit MetricSink(Report& r) : r_(r) {}
  void add(const std::string& name, double value) { r_.metrics.push_back({name, value}); }
  void add3(const std::string& prefix, const Vec3& v) {
    const auto names = axes(prefix);
    for (int i = 0; i < 3; ++i) add(names[static_cast<std::size_t>(i)], v(i));
  }

private:
  Report& r_;
};

std::array<Histogram, 3> histogram3(const std::vector<Vec3>& values, double lo, double hi, std::size_t bins) {
  std::array<Histogram, 3> out;
  std::vector<double> column(values.size());
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < values.size(); ++i) column[i] = values[i](a);
    out[static_cast<std::size_t>(a)] = make_histogram(column, lo, hi, bins);
  }
  return out;
}

RotationMatrix euler_deg(const KeyValueConfig& cfg, const std::string& prefix, const EulerAngles& fallback,
                         EulerAngles& out) {
  out.theta_x = cfg.get_double(prefix + "_x", fallback.theta_x / kDeg) * kDeg;
  out.theta_y = cfg.get_double(prefix + "_y", fallback.theta_y / kDeg) * kDeg;
  out.theta_z = cfg.get_double(prefix + "_z", fallback.theta_z / kDeg) * kDeg;
  return euler_to_rotation(out);
}

double positive(const KeyValueConfig& cfg, const std::string& key, double fallback) {
  const double v = cfg.get_double(key, fallback);
  if (!(v > 0.0)) throw ConfigError("'" + key + "' must be positive");
  return v;
}

double non_negative(const KeyValueConfig& cfg, const std::string& key, double fallback) {
  const double v = cfg.get_double(key, fallback);
  if (!(v >= 0.0)) throw ConfigError("'" + key + "' must be >= 0");
  return v;
}

gravity::CalibrationSet gravity_set(const ExperimentConfig& c) {
  if (!c.gravity_input.empty()) return gravity::read_calibration_set(c.gravity_input);
  return sim::gravity_sweep(c.session, c.gravity_poses);
}

// Bias model used to compensate S1, or nullopt when the simulated sensor is unbiased.
std::optional<gravity::FitReport> bias_fit(const ExperimentConfig& c) {
  if (c.session.gravity_bias_n == 0.0 && c.gravity_input.empty()) return std::nullopt;
  return gravity::fit(gravity_set(c));
}

tipforce::Dataset compensated_dataset(const sim::SessionLog& log, const gravity::Model* bias) {
  tipforce::Dataset data = sim::tipforce_dataset(log);
  if (bias == nullptr) return data;
  const auto idx = sim::aligned_indices(log);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const RollPitch rp = roll_pitch_from_accel(log.follower[idx[i]].accel_s1);
    data[i].f1 = gravity::compensate(*bias, rp.alpha, rp.beta, data[i].f1);
  }
  return data;
}

sim::SessionConfig derived_session(const sim::SessionConfig& base, sim::TrajectoryKind kind, double duration,
                                   std::uint64_t seed_offset) {
  sim::SessionConfig s = base;
  s.trajectory = kind;
  s.duration_s = duration;
  s.seed = base.seed + seed_offset;
  return s;
}

struct NoContactResult {
  Vec3 mean_abs = Vec3::Zero();
  Vec3 sd = Vec3::Zero();
  std::vector<Vec3> predictions;
};

NoContactResult no_contact_check(const ExperimentConfig& c, const tipforce::Mlp& model, const gravity::Model* bias) {
  const sim::SessionConfig sc =
      derived_session(c.session, sim::TrajectoryKind::kNoContact, c.no_contact_duration_s, 1);
  sim::RcmFrictionModel rcm = c.rcm;
  const sim::SessionLog log = sim::run_session(sc, c.tissue, rcm);
  const tipforce::Dataset data = compensated_dataset(log, bias);
  NoContactResult r;
  r.predictions.reserve(data.size());
  std::array<std::vector<double>, 3> cols;
  for (const auto& s : data) {
    const Vec3 p = model.predict(s.f1, s.q);
    r.predictions.push_back(p);
    for (int a = 0; a < 3; ++a) cols[static_cast<std::size_t>(a)].push_back(p(a));
  }
  for (int a = 0; a < 3; ++a) {
    const auto& col = cols[static_cast<std::size_t>(a)];
    double s = 0.0;
    for (double v : col) s += std::abs(v);
    r.mean_abs(a) = col.empty() ? 0.0 : s / static_cast<double>(col.size());
    r.sd(a) = stddev(col);
  }
  return r;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Vec3>& p) {
  CsvWriter w(path, {"index", "fx", "fy", "fz"});
  for (std::size_t i = 0; i < p.size(); ++i) {
    w.row({static_cast<double>(i), p[i].x(), p[i].y(), p[i].z()});
  }
  w.close();
}

impedance::MotionStream session_motion(const ExperimentConfig& c, const sim::SessionLog& log) {
  impedance::MotionStream motion = sim::command_motion(log);
  if (c.derivative_source == DerivativeSource::kDifferentiate) {
    std::vector<impedance::TimedPosition> pos;
    pos.reserve(motion.size());
    for (const auto& m : motion) pos.push_back({m.t_ms, m.pos});
    motion = impedance::differentiate_stream(pos, c.differentiation);
  }
  return motion;
}

std::vector<Vec3> session_forces(const ExperimentConfig& c, const sim::SessionLog& log) {
  if (c.force_source == ForceSource::kSensor) {
    return sim::aligned_tip_forces(log, sim::ForceView::kTissueSensorWorld);
  }
  if (c.model_file.empty()) {
    throw ConfigError("force_source = network needs model_file");
  }
  const tipforce::Mlp model = tipforce::Mlp::load(c.model_file);
  std::vector<Vec3> out;
  for (std::size_t k : sim::aligned_indices(log)) {
    const auto& f = log.follower[k];
    out.push_back(quat_to_rotation(f.q) * model.predict(f.f1_sensor, f.q));
  }
  return out;
}

impedance::EngineRun engine_session(const ExperimentConfig& c, const sim::SessionConfig& sc,
                                    const sim::TissueModel& tissue, impedance::MotionStream* motion_out = nullptr,
                                    std::vector<Vec3>* measured_out = nullptr) {
  const sim::SessionLog log = sim::run_session(sc, tissue, c.rcm);
  impedance::MotionStream motion = session_motion(c, log);
  const std::vector<Vec3> measured = session_forces(c, log);
  const std::vector<Vec3> truth = sim::aligned_tip_forces(log, sim::ForceView::kTrueTipWorld);
  impedance::EngineRun run = impedance::run_engine(motion, measured, truth, c.engine);
  if (motion_out) *motion_out = std::move(motion);
  if (measured_out) *measured_out = measured;
  return run;
}

bool is_zero(const Vec3& v) { return v.x() == 0.0 && v.y() == 0.0 && v.z() == 0.0; }

struct RenderError {
  AxisReport vs_truth;
  double mae_vs_measured = 0.0;
  std::vector<Vec3> errors;
};

// Samples that are gated or rendered before any model exists are excluded.
RenderError render_error(const std::vector<impedance::RenderRecord>& rec, const std::vector<Vec3>& measured) {
  std::vector<Vec3> est, ref;
  double meas = 0.0;
  RenderError out;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (rec[i].gated || rec[i].degree_used == 0) continue;
    est.push_back(rec[i].rendered);
    ref.push_back(rec[i].reference);
    out.errors.push_back(rec[i].rendered - rec[i].reference);
    meas += (rec[i].rendered - measured[i]).cwiseAbs().mean();
  }
  if (est.size() < 2) {
    throw InsufficientData("no rendered samples with an identified model");
  }
  out.vs_truth = compare_streams(est, ref);
  out.mae_vs_measured = meas / static_cast<double>(est.size());
  return out;
}

Report validation_frames(const ExperimentConfig& c) {
  Report r;
  r.validation = Validation::kFrames;
  MetricSink m(r);
  frames::CorrespondenceSet set;
  std::optional<gravity::FitReport> bias;
  const frames::Calibration calib = calibrate_frames(c, &set);
  if (c.correspondence_input.empty()) bias = bias_fit(c);
  const RotationMatrix truth =
      euler_to_rotation(c.session.camera_orientation).transpose() * euler_to_rotation(c.session.tissue_sensor_orientation);

  m.add3("r2", calib.r2);
  m.add3("mae", calib.mae);
  m.add3("sd", calib.sd);
  m.add("rotation_error_deg", geodesic_angle(calib.rotation, truth) / kDeg);
  m.add("theta_x_deg", calib.euler.theta_x / kDeg);
  m.add("theta_y_deg", calib.euler.theta_y / kDeg);
  m.add("theta_z_deg", calib.euler.theta_z / kDeg);
  m.add("residual_rms_n", calib.residual_rms);
  m.add("gravity_residual_rms_n", bias ? bias->residual_rms.norm() / std::sqrt(3.0) : 0.0);
  m.add("samples", static_cast<double>(set.size()));

  const std::vector<Vec3> est = frames::transform_tip_forces(calib, set);
  auto errors = std::make_shared<std::vector<Vec3>>();
  for (std::size_t i = 0; i < set.size(); ++i) errors->push_back(est[i] - set[i].f_robot);
  r.histogram = histogram3(*errors, -0.3, 0.3, 60);

  r.artifacts.push_back({"calibration.csv", [calib](const auto& p) { frames::write_calibration(p, calib); }});
  auto shared_set = std::make_shared<frames::CorrespondenceSet>(std::move(set));
  auto shared_est = std::make_shared<std::vector<Vec3>>(est);
  r.artifacts.push_back({"correspondence_log.csv", [shared_set, shared_est](const auto& p) {
                           CsvWriter w(p, {"t_ms", "f_robot_x", "f_robot_y", "f_robot_z", "f_tip_x", "f_tip_y",
                                           "f_tip_z"});
                           for (std::size_t i = 0; i < shared_set->size(); ++i) {
                             const auto& s = (*shared_set)[i];
                             const Vec3& e = (*shared_est)[i];
                             w.row({s.t_ms, s.f_robot.x(), s.f_robot.y(), s.f_robot.z(), e.x(), e.y(), e.z()});
                           }
                           w.close();
                         }});
  if (bias) {
    const gravity::Model model = bias->model;
    r.artifacts.push_back({"gravity_model.csv", [model](const auto& p) { gravity::write_model(p, model); }});
  }
  return r;
}

void add_training_artifacts(Report& r, const tipforce::TrainResult& trained) {
  auto shared = std::make_shared<tipforce::TrainResult>(trained);
  r.artifacts.push_back({"tipforce_model.txt", [shared](const auto& p) { shared->model.save(p); }});
  r.artifacts.push_back({"training_curve.csv", [shared](const auto& p) {
                           CsvWriter w(p, {"epoch", "train_loss", "validation_mae_n"});
                           const auto& rep = shared->report;
                           for (std::size_t i = 0; i < rep.train_loss.size(); ++i) {
                             w.row({static_cast<double>(i + 1), rep.train_loss[i], rep.validation_mae[i]});
                           }
                           w.close();
                         }});
}

Report validation_tipforce(const ExperimentConfig& c) {
  Report r;
  r.validation = Validation::kTipForce;
  MetricSink m(r);
  const std::optional<gravity::FitReport> bias = bias_fit(c);
  const tipforce::TrainResult trained = train_tipforce(c);
  m.add3("test_mae", trained.report.test_mae);
  m.add3("test_sd", trained.report.test_sd);
  m.add("best_epoch", trained.report.best_epoch);
  m.add("train_rows", static_cast<double>(trained.report.train_rows));
  m.add("test_rows", static_cast<double>(trained.report.test_rows));

  const NoContactResult nc = no_contact_check(c, trained.model, bias ? &bias->model : nullptr);
  m.add3("nocontact_mean_abs", nc.mean_abs);
  m.add3("nocontact_sd", nc.sd);

  // residuals of the held-out test block
  tipforce::Dataset data;
  if (!c.dataset_input.empty()) {
    data = tipforce::read_dataset(c.dataset_input);
  } else {
    data = compensated_dataset(sim::run_session(c.session, c.tissue, c.rcm), bias ? &bias->model : nullptr);
  }
  const std::size_t test_begin = data.size() - trained.report.test_rows;
  const tipforce::Dataset test(data.begin() + static_cast<long>(test_begin), data.end());
  auto errors = std::make_shared<std::vector<Vec3>>(tipforce::prediction_errors(trained.model, test));
  r.histogram = histogram3(*errors, -0.5, 0.5, 50);

  add_training_artifacts(r, trained);
  r.artifacts.push_back({"test_errors.csv", [errors](const auto& p) { write_predictions(p, *errors); }});
  auto preds = std::make_shared<std::vector<Vec3>>(nc.predictions);
  r.artifacts.push_back({"nocontact_predictions.csv", [preds](const auto& p) { write_predictions(p, *preds); }});
  return r;
}

Report validation_no_contact(const ExperimentConfig& c) {
  Report r;
  r.validation = Validation::kNoContact;
  MetricSink m(r);
  const std::optional<gravity::FitReport> bias = bias_fit(c);
  tipforce::Mlp model;
  if (!c.model_file.empty()) {
    model = tipforce::Mlp::load(c.model_file);
  } else {
    const tipforce::TrainResult trained = train_tipforce(c);
    model = trained.model;
    add_training_artifacts(r, trained);
  }
  const NoContactResult nc = no_contact_check(c, model, bias ? &bias->model : nullptr);
  m.add3("nocontact_mean_abs", nc.mean_abs);
  m.add3("nocontact_sd", nc.sd);
  r.histogram = histogram3(nc.predictions, -0.25, 0.25, 50);
  auto preds = std::make_shared<std::vector<Vec3>>(nc.predictions);
  r.artifacts.push_back({"nocontact_predictions.csv", [preds](const auto& p) { write_predictions(p, *preds); }});
  return r;
}

Report validation_impedance(const ExperimentConfig& c) {
  Report r;
  r.validation = Validation::kImpedance;
  MetricSink m(r);

  impedance::MotionStream motion;
  std::vector<Vec3> measured;
  auto run = std::make_shared<impedance::EngineRun>(engine_session(c, c.session, c.tissue, &motion, &measured));
  const RenderError nima = render_error(run->nima, measured);
  const RenderError ima = render_error(run->linear_ima, measured);
  m.add("nima_mae_n", nima.vs_truth.mean_mae());
  m.add3("nima_mae", nima.vs_truth.mae);
  m.add3("nima_sd", nima.vs_truth.sd);
  m.add("ima_mae_n", ima.vs_truth.mean_mae());
  m.add3("ima_mae", ima.vs_truth.mae);
  m.add("improvement_ratio", 1.0 - nima.vs_truth.mean_mae() / ima.vs_truth.mean_mae());
  m.add("nima_mae_measured_n", nima.mae_vs_measured);
  m.add("ima_mae_measured_n", ima.mae_vs_measured);

  std::vector<impedance::TimedForce> stream;
  stream.reserve(measured.size());
  for (std::size_t i = 0; i < measured.size(); ++i) stream.push_back({motion[i].t_ms, measured[i]});
  const auto dfr = impedance::dfr_baseline(stream, c.session.delay_ms);
  double dfr_sum = 0.0;
  std::size_t dfr_n = 0;
  for (std::size_t i = 0; i < dfr.size(); ++i) {
    if (dfr[i].t_ms < c.session.delay_ms) continue;
    dfr_sum += (dfr[i].force - run->nima[i].reference).cwiseAbs().mean();
    ++dfr_n;
  }
  m.add("dfr_mae_n", dfr_n ? dfr_sum / static_cast<double>(dfr_n) : 0.0);

  std::array<std::size_t, impedance::kMaxDegree + 1> share{};
  for (const auto& w : run->windows) share[static_cast<std::size_t>(w.selected)]++;
  const double identified = static_cast<double>(run->windows.size() - share[0]);
  m.add("nonlinear_fraction", identified > 0 ? (identified - static_cast<double>(share[1])) / identified : 0.0);
  for (int d = 1; d <= impedance::kMaxDegree; ++d) {
    m.add("degree_share_" + std::to_string(d),
          identified > 0 ? static_cast<double>(share[static_cast<std::size_t>(d)]) / identified : 0.0);
  }
  m.add("windows", static_cast<double>(run->windows.size()));
  m.add("poorly_excited_windows", static_cast<double>(run->poorly_excited_windows));
  std::size_t gated = 0;
  for (const auto& rec : run->nima) gated += rec.gated ? 1 : 0;
  m.add("gated_samples", static_cast<double>(gated));

  // release test: operator lets go of the handle while the tool rests in tissue
  const sim::SessionConfig rel =
      derived_session(c.session, sim::TrajectoryKind::kReleaseTest, c.release_duration_s, 2);
  impedance::MotionStream rel_motion;
  auto rel_run = std::make_shared<impedance::EngineRun>(engine_session(c, rel, c.tissue, &rel_motion));
  const sim::ReleasePhase phase = sim::release_phase(c.release_duration_s);
  std::size_t hold = 0, violations = 0, post_nonzero = 0;
  for (std::size_t i = 0; i < rel_run->nima.size(); ++i) {
    const auto& rec = rel_run->nima[i];
    const bool slow = rel_motion[i].vel.norm() < c.engine.gate_mm_s;
    if (slow) {
      ++hold;
      if (!rec.gated || !is_zero(rec.rendered)) ++violations;
    }
    if (rec.t_ms >= phase.release_s * 1000.0 + c.engine.window_ms && rec.t_ms < phase.resume_s * 1000.0 &&
        !is_zero(rec.rendered)) {
      ++post_nonzero;
    }
  }
  m.add("release_hold_samples", static_cast<double>(hold));
  m.add("release_gate_violations", static_cast<double>(violations));
  m.add("release_post_nonzero", static_cast<double>(post_nonzero));

  // purely linear, noiseless tissue: every degree fits, ties go to N = 1
  sim::TissueModel linear = c.tissue;
  linear.law = sim::TissueLaw::kPolynomial;
  linear.k2 = 0.0;
  linear.k3 = 0.0;
  sim::SessionConfig lin = derived_session(c.session, sim::TrajectoryKind::kIndentation, c.linear_session_duration_s, 3);
  lin.noise_sd_n = 0.0;
  ExperimentConfig lin_cfg = c;
  lin_cfg.force_source = ForceSource::kSensor;
  const impedance::EngineRun lin_run = engine_session(lin_cfg, lin, linear);
  std::size_t lin_ok = 0, lin_n1 = 0;
  for (const auto& w : lin_run.windows) {
    if (w.selected == 0) continue;
    ++lin_ok;
    lin_n1 += w.selected == 1 ? 1 : 0;
  }
  m.add("linear_n1_fraction", lin_ok ? static_cast<double>(lin_n1) / static_cast<double>(lin_ok) : 0.0);

  r.histogram = histogram3(nima.errors, -0.2, 0.2, 80);
  r.artifacts.push_back({"render_log.csv", [run](const auto& p) { impedance::write_render_log(p.string(), run->nima); }});
  r.artifacts.push_back(
      {"render_log_linear.csv", [run](const auto& p) { impedance::write_render_log(p.string(), run->linear_ima); }});
  r.artifacts.push_back({"window_log.csv", [run](const auto& p) { impedance::write_window_log(p.string(), run->windows); }});
  r.artifacts.push_back(
      {"release_render_log.csv", [rel_run](const auto& p) { impedance::write_render_log(p.string(), rel_run->nima); }});
  return r;
}

}  // namespace

Validation parse_validation(const std::string& name) {
  if (name == "1") return Validation::kFrames;
  if (name == "2") return Validation::kTipForce;
  if (name == "2b-no-contact") return Validation::kNoContact;
  if (name == "3") return Validation::kImpedance;
  throw ConfigError("unknown validation '" + name + "' (expected 1, 2, 2b-no-contact or 3)");
}

const char* to_string(Validation v) {
  switch (v) {
    case Validation::kFrames: return "1";
    case Validation::kTipForce: return "2";
    case Validation::kNoContact: return "2b-no-contact";
    case Validation::kImpedance: return "3";
  }
  return "?";
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "trajectory", "duration_s", "command_rate_hz", "force_rate_hz", "delay_ms", "noise_sd_n", "seed",
      "tissue_sensor_deg_x", "tissue_sensor_deg_y", "tissue_sensor_deg_z", "camera_deg_x", "camera_deg_y",
      "camera_deg_z", "tissue_clock_offset_ms", "gravity_bias_n", "gravity_poses",
      "tissue_law", "tissue_k1", "tissue_k2", "tissue_k3", "tissue_damping", "tissue_damping_onset_mm", "tissue_shear_damping",
      "tissue_exp_gain", "tissue_exp_length_mm",
      "rcm_enabled", "rcm_pivot_x_mm", "rcm_pivot_y_mm", "rcm_pivot_z_mm", "rcm_coulomb_n", "rcm_viscous",
      "rcm_orientation_gain", "rcm_smoothing_mm_s",
      "window_ms", "gate_mm_s", "identify_every_ms", "model_latency_ms", "degree_min", "degree_max",
      "degree_selection", "holdout_fraction", "tie_tolerance_n", "svd_cutoff", "parallel_degrees",
      "derivative_source", "smoothing_passes", "smoothing_window", "force_source", "model_file",
      "release_duration_s", "linear_session_duration_s",
      "nn_hidden", "nn_max_epochs", "nn_batch", "nn_learning_rate", "nn_momentum", "nn_patience", "nn_optimizer",
      "nn_seed", "nn_train_fraction", "nn_validation_fraction", "nn_augment_sign", "no_contact_duration_s",
      "gravity_input", "correspondence_input", "dataset_input"};
  return keys;
}

std::vector<std::string> metric_names(Validation v) {
  std::vector<std::string> out;
  switch (v) {
    case Validation::kFrames:
      append(out, axes("r2"));
      append(out, axes("mae"));
      append(out, axes("sd"));
      append(out, {"rotation_error_deg", "theta_x_deg", "theta_y_deg", "theta_z_deg", "residual_rms_n",
                   "gravity_residual_rms_n", "samples"});
      break;
    case Validation::kTipForce:
      append(out, axes("test_mae"));
      append(out, axes("test_sd"));
      append(out, {"best_epoch", "train_rows", "test_rows"});
      append(out, axes("nocontact_mean_abs"));
      append(out, axes("nocontact_sd"));
      break;
    case Validation::kNoContact:
      append(out, axes("nocontact_mean_abs"));
      append(out, axes("nocontact_sd"));
      break;
    case Validation::kImpedance:
      out.push_back("nima_mae_n");
      append(out, axes("nima_mae"));
      append(out, axes("nima_sd"));
      out.push_back("ima_mae_n");
      append(out, axes("ima_mae"));
      append(out, {"improvement_ratio", "nima_mae_measured_n", "ima_mae_measured_n", "dfr_mae_n",
                   "nonlinear_fraction", "degree_share_1", "degree_share_2", "degree_share_3", "degree_share_4",
                   "degree_share_5", "windows", "poorly_excited_windows", "gated_samples", "release_hold_samples",
                   "release_gate_violations", "release_post_nonzero", "linear_n1_fraction"});
      break;
  }
  return out;
}

std::vector<Threshold> default_thresholds(Validation v) {
  std::vector<Threshold> t;
  auto max3 = [&](const std::string& prefix, double bound) {
    for (const auto& n : axes(prefix)) t.push_back({n, true, bound});
  };
  switch (v) {
    case Validation::kFrames:
      for (const auto& n : axes("r2")) t.push_back({n, false, 0.95});
      t.push_back({"rotation_error_deg", true, 0.5});
      break;
    case Validation::kTipForce:
      max3("test_mae", 0.2);
      max3("nocontact_mean_abs", 0.05);
      max3("nocontact_sd", 0.05);
      break;
    case Validation::kNoContact:
      max3("nocontact_mean_abs", 0.05);
      max3("nocontact_sd", 0.05);
      break;
    case Validation::kImpedance:
      t.push_back({"nima_mae_n", true, 0.02});
      t.push_back({"improvement_ratio", false, 0.8});
      t.push_back({"nonlinear_fraction", false, 0.64});
      t.push_back({"release_gate_violations", true, 0.0});
      t.push_back({"release_post_nonzero", true, 0.0});
      t.push_back({"linear_n1_fraction", false, 0.9});
      break;
  }
  return t;
}

ExperimentConfig make_experiment(Validation v, const KeyValueConfig& cfg) {
  cfg.reject_unknown(known_keys(), {"max.", "min."});
  ExperimentConfig c;
  c.validation = v;

  // reference setup per validation
  const bool frames = v == Validation::kFrames;
  const bool tip = v == Validation::kTipForce || v == Validation::kNoContact;
  const sim::TrajectoryKind default_kind = tip ? sim::TrajectoryKind::kPegTransfer : sim::TrajectoryKind::kIndentation;
  const bool default_rcm = tip;
  const double default_shear = 0.01;

  auto& s = c.session;
  s.trajectory = sim::parse_trajectory(cfg.get_string("trajectory", sim::to_string(default_kind)));
  s.duration_s = positive(cfg, "duration_s", 30.0);
  s.command_rate_hz = positive(cfg, "command_rate_hz", 1000.0);
  s.force_rate_hz = positive(cfg, "force_rate_hz", 2000.0);
  s.delay_ms = positive(cfg, "delay_ms", 300.0);
  s.noise_sd_n = non_negative(cfg, "noise_sd_n", 0.03);
  const long long seed = cfg.get_int("seed", 1);
  if (seed < 0) throw ConfigError("'seed' must be >= 0");
  s.seed = static_cast<std::uint64_t>(seed);
  euler_deg(cfg, "tissue_sensor_deg", s.tissue_sensor_orientation, s.tissue_sensor_orientation);
  euler_deg(cfg, "camera_deg", s.camera_orientation, s.camera_orientation);
  s.tissue_clock_offset_ms = non_negative(cfg, "tissue_clock_offset_ms", 0.0);
  s.gravity_bias_n = non_negative(cfg, "gravity_bias_n", 0.0);
  const long long poses = cfg.get_int("gravity_poses", 200);
  if (poses < 5) throw ConfigError("'gravity_poses' must be at least 5");
  c.gravity_poses = static_cast<std::size_t>(poses);
  s.validate();

  auto& t = c.tissue;
  const std::string law = cfg.get_string("tissue_law", "polynomial");
  if (law == "polynomial") {
    t.law = sim::TissueLaw::kPolynomial;
  } else if (law == "exponential") {
    t.law = sim::TissueLaw::kExponential;
  } else {
    throw ConfigError("'tissue_law' must be polynomial or exponential");
  }
  t.k1 = cfg.get_double("tissue_k1", t.k1);
  t.k2 = cfg.get_double("tissue_k2", t.k2);
  t.k3 = cfg.get_double("tissue_k3", t.k3);
  t.damping = non_negative(cfg, "tissue_damping", t.damping);
  t.damping_onset_mm = non_negative(cfg, "tissue_damping_onset_mm", t.damping_onset_mm);
  t.shear_damping = non_negative(cfg, "tissue_shear_damping", default_shear);
  t.exp_gain = non_negative(cfg, "tissue_exp_gain", t.exp_gain);
  t.exp_length_mm = positive(cfg, "tissue_exp_length_mm", t.exp_length_mm);

  auto& r = c.rcm;
  r.enabled = cfg.get_bool("rcm_enabled", default_rcm);
  r.pivot_mm = Vec3(cfg.get_double("rcm_pivot_x_mm", r.pivot_mm.x()), cfg.get_double("rcm_pivot_y_mm", r.pivot_mm.y()),
                    cfg.get_double("rcm_pivot_z_mm", r.pivot_mm.z()));
  if (!(r.pivot_mm.z() > 20.0)) throw ConfigError("'rcm_pivot_z_mm' must lie well above the tissue (> 20 mm)");
  r.coulomb_n = non_negative(cfg, "rcm_coulomb_n", r.coulomb_n);
  r.viscous = non_negative(cfg, "rcm_viscous", r.viscous);
  r.orientation_gain = non_negative(cfg, "rcm_orientation_gain", r.orientation_gain);
  r.smoothing_mm_s = positive(cfg, "rcm_smoothing_mm_s", r.smoothing_mm_s);

  auto& e = c.engine;
  e.rate_hz = s.command_rate_hz;
  e.window_ms = positive(cfg, "window_ms", e.window_ms);
  e.gate_mm_s = non_negative(cfg, "gate_mm_s", e.gate_mm_s);
  e.identify_every_ms = positive(cfg, "identify_every_ms", e.identify_every_ms);
  e.model_latency_ms = non_negative(cfg, "model_latency_ms", e.model_latency_ms);
  e.selection.min_degree = static_cast<int>(cfg.get_int("degree_min", impedance::kMinDegree));
  e.selection.max_degree = static_cast<int>(cfg.get_int("degree_max", impedance::kMaxDegree));
  if (e.selection.min_degree < impedance::kMinDegree || e.selection.max_degree > impedance::kMaxDegree ||
      e.selection.min_degree > e.selection.max_degree) {
    throw ConfigError("degree range must satisfy 1 <= degree_min <= degree_max <= 5");
  }
  const std::string mode = cfg.get_string("degree_selection", "insample");
  if (mode == "insample") {
    e.selection.mode = impedance::DegreeSelection::kInSample;
  } else if (mode == "holdout") {
    e.selection.mode = impedance::DegreeSelection::kHoldout;
  } else {
    throw ConfigError("'degree_selection' must be insample or holdout");
  }
  e.selection.holdout_fraction = cfg.get_double("holdout_fraction", e.selection.holdout_fraction);
  if (!(e.selection.holdout_fraction > 0.0 && e.selection.holdout_fraction < 1.0)) {
    throw ConfigError("'holdout_fraction' must lie in (0, 1)");
  }
  e.selection.tie_tolerance = non_negative(cfg, "tie_tolerance_n", e.selection.tie_tolerance);
  e.selection.identify.relative_cutoff = positive(cfg, "svd_cutoff", e.selection.identify.relative_cutoff);
  e.selection.parallel = cfg.get_bool("parallel_degrees", false);

  const std::string deriv = cfg.get_string("derivative_source", "command");
  if (deriv == "command") {
    c.derivative_source = DerivativeSource::kCommand;
  } else if (deriv == "differentiate") {
    c.derivative_source = DerivativeSource::kDifferentiate;
  } else {
    throw ConfigError("'derivative_source' must be command or differentiate");
  }
  const long long passes = cfg.get_int("smoothing_passes", 0);
  const long long width = cfg.get_int("smoothing_window", 5);
  if (passes < 0 || width < 1 || width % 2 == 0) {
    throw ConfigError("'smoothing_passes' must be >= 0 and 'smoothing_window' a positive odd number");
  }
  c.differentiation.smoothing_passes = static_cast<int>(passes);
  c.differentiation.smoothing_window = static_cast<int>(width);
  const std::string source = cfg.get_string("force_source", "sensor");
  if (source == "sensor") {
    c.force_source = ForceSource::kSensor;
  } else if (source == "network") {
    c.force_source = ForceSource::kNetwork;
  } else {
    throw ConfigError("'force_source' must be sensor or network");
  }
  c.model_file = cfg.get_string("model_file", "");
  if (c.force_source == ForceSource::kNetwork && c.model_file.empty()) {
    throw ConfigError("force_source = network needs model_file");
  }
  c.release_duration_s = cfg.get_double("release_duration_s", 6.0);
  if (!(c.release_duration_s >= 4.0)) throw ConfigError("'release_duration_s' must be at least 4");
  c.linear_session_duration_s = positive(cfg, "linear_session_duration_s", 5.0);
  if (c.linear_session_duration_s * 1000.0 <= e.window_ms) {
    throw ConfigError("'linear_session_duration_s' must exceed the window");
  }

  auto& n = c.train;
  n.hidden = cfg.get_int_list("nn_hidden", n.hidden);
  for (int h : n.hidden) {
    if (h < 1) throw ConfigError("'nn_hidden' layer sizes must be positive");
  }
  n.max_epochs = static_cast<int>(cfg.get_int("nn_max_epochs", n.max_epochs));
  n.batch_size = static_cast<int>(cfg.get_int("nn_batch", n.batch_size));
  n.learning_rate = positive(cfg, "nn_learning_rate", n.learning_rate);
  n.momentum = non_negative(cfg, "nn_momentum", n.momentum);
  n.patience = static_cast<int>(cfg.get_int("nn_patience", n.patience));
  if (n.max_epochs < 1 || n.batch_size < 1 || n.patience < 1 || n.momentum >= 1.0) {
    throw ConfigError("network training settings out of range");
  }
  const std::string opt = cfg.get_string("nn_optimizer", "momentum");
  if (opt == "momentum") {
    n.optimizer = tipforce::Optimizer::kMomentum;
  } else if (opt == "line-search") {
    n.optimizer = tipforce::Optimizer::kFullBatchLineSearch;
  } else {
    throw ConfigError("'nn_optimizer' must be momentum or line-search");
  }
  n.seed = static_cast<std::uint64_t>(cfg.get_int("nn_seed", static_cast<long long>(s.seed)));
  n.train_fraction = cfg.get_double("nn_train_fraction", n.train_fraction);
  n.validation_fraction = cfg.get_double("nn_validation_fraction", n.validation_fraction);
  if (!(n.train_fraction > 0.0) || !(n.validation_fraction > 0.0) || n.train_fraction + n.validation_fraction >= 1.0) {
    throw ConfigError("network split fractions must be positive and leave a test block");
  }
  n.augment_quaternion_sign = cfg.get_bool("nn_augment_sign", n.augment_quaternion_sign);
  c.no_contact_duration_s = positive(cfg, "no_contact_duration_s", 10.0);

  c.gravity_input = cfg.get_string("gravity_input", "");
  c.correspondence_input = cfg.get_string("correspondence_input", "");
  c.dataset_input = cfg.get_string("dataset_input", "");

  // thresholds: defaults, then max.<metric> / min.<metric> overrides
  c.thresholds = default_thresholds(v);
  const auto names = metric_names(v);
  for (const auto& key : cfg.keys()) {
    const bool is_max = key.rfind("max.", 0) == 0;
    const bool is_min = key.rfind("min.", 0) == 0;
    if (!is_max && !is_min) continue;
    const std::string metric = key.substr(4);
    if (std::find(names.begin(), names.end(), metric) == names.end()) {
      throw ConfigError("threshold '" + key + "' names a metric validation " + to_string(v) + " does not report");
    }
    const double bound = cfg.get_double(key, 0.0);
    bool replaced = false;
    for (auto& th : c.thresholds) {
      if (th.metric == metric && th.is_max == is_max) {
        th.bound = bound;
        replaced = true;
      }
    }
    if (!replaced) c.thresholds.push_back({metric, is_max, bound});
  }
  (void)frames;
  return c;
}

double Report::value(const std::string& name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return m.value;
  }
  throw ConfigError("metric '" + name + "' is not reported");
}

bool Report::passed() const {
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

gravity::FitReport calibrate_gravity(const ExperimentConfig& config) { return gravity::fit(gravity_set(config)); }

frames::Calibration calibrate_frames(const ExperimentConfig& c, frames::CorrespondenceSet* used) {
  frames::CorrespondenceSet set;
  if (!c.correspondence_input.empty()) {
    set = frames::read_correspondence(c.correspondence_input);
  } else {
    const std::optional<gravity::FitReport> bias = bias_fit(c);
    const sim::SessionLog log = sim::run_session(c.session, c.tissue, c.rcm);
    set = sim::correspondence_set(log, bias ? &bias->model : nullptr);
  }
  frames::Calibration calib = frames::estimate_rotation(set);
  if (used) *used = std::move(set);
  return calib;
}

tipforce::TrainResult train_tipforce(const ExperimentConfig& c) {
  tipforce::Dataset data;
  if (!c.dataset_input.empty()) {
    data = tipforce::read_dataset(c.dataset_input);
  } else {
    const std::optional<gravity::FitReport> bias = bias_fit(c);
    data = compensated_dataset(sim::run_session(c.session, c.tissue, c.rcm), bias ? &bias->model : nullptr);
  }
  return tipforce::train(data, c.train);
}

Report run_validation(const ExperimentConfig& config) {
  Report r;
  switch (config.validation) {
    case Validation::kFrames: r = validation_frames(config); break;
    case Validation::kTipForce: r = validation_tipforce(config); break;
    case Validation::kNoContact: r = validation_no_contact(config); break;
    case Validation::kImpedance: r = validation_impedance(config); break;
  }
  evaluate_thresholds(r, config.thresholds);
  return r;
}

void evaluate_thresholds(Report& report, const std::vector<Threshold>& thresholds) {
  report.checks.clear();
  for (const auto& t : thresholds) {
    const double v = report.value(t.metric);
    const bool pass = t.is_max ? v <= t.bound : v >= t.bound;
    report.checks.push_back({t, v, pass});
  }
}

void emit_report(const std::filesystem::path& dir, const Report& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.csv");
    out << "metric,value\n";
    for (const auto& m : report.metrics) out << m.name << ',' << format_number(m.value) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "metrics.csv").string());
  }
  {
    std::ofstream out(dir / "thresholds.csv");
    out << "metric,comparison,bound,value,pass\n";
    for (const auto& c : report.checks) {
      out << c.threshold.metric << ',' << (c.threshold.is_max ? "<=" : ">=") << ',' << format_number(c.threshold.bound)
          << ',' << format_number(c.value) << ',' << (c.pass ? 1 : 0) << '\n';
    }
    if (!out) throw IoError("cannot write " + (dir / "thresholds.csv").string());
  }
  if (!report.histogram[0].counts.empty()) {
    const auto& h = report.histogram;
    CsvWriter w(dir / "residual_histogram.csv", {"bin_lo", "bin_hi", "count_x", "count_y", "count_z"});
    for (std::size_t b = 0; b < h[0].counts.size(); ++b) {
      const double lo = h[0].lo + h[0].bin_width() * static_cast<double>(b);
      w.row({lo, lo + h[0].bin_width(), static_cast<double>(h[0].counts[b]), static_cast<double>(h[1].counts[b]),
             static_cast<double>(h[2].counts[b])});
    }
    w.close();
  }
  for (const auto& [name, write] : report.artifacts) write(dir / name);
}

}  // namespace nima::harness
