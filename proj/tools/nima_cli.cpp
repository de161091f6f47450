#include <chrono>
#include <cstdio>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "nima/config.hpp"
#include "nima/error.hpp"
#include "nima/harness.hpp"

using namespace nima;

namespace {

enum Exit { kPass = 0, kThresholdFail = 1, kUsage = 2, kRuntime = 3 };

struct Common {
  std::string config;
  std::string out;
  long long seed = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value configuration file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--seed", c.seed, "overrides the configured seed")->check(CLI::NonNegativeNumber);
}

harness::ExperimentConfig load(const Common& c, harness::Validation v) {
  KeyValueConfig cfg = KeyValueConfig::load(c.config);
  if (c.seed >= 0) cfg.set("seed", std::to_string(c.seed));
  return harness::make_experiment(v, cfg);
}

void print_metrics(const harness::Report& r) {
  for (const auto& m : r.metrics) std::printf("%-26s %.6g\n", m.name.c_str(), m.value);
  for (const auto& c : r.checks) {
    std::printf("%s  %s %s %.6g (value %.6g)\n", c.pass ? "PASS" : "FAIL", c.threshold.metric.c_str(),
                c.threshold.is_max ? "<=" : ">=", c.threshold.bound, c.value);
  }
}

int finish(const std::string& out, harness::Report& r, std::chrono::steady_clock::time_point start) {
  harness::emit_report(out, r);
  print_metrics(r);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("wrote %s (%.1f s)\n", out.c_str(), secs);
  return r.passed() ? kPass : kThresholdFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear impedance haptics toolkit: calibration, tip-force isolation, impedance rendering"};
  app.require_subcommand(1);

  Common gravity_opts, frames_opts, train_opts, validation_opts, sim_opts;
  std::string validation_id;
  std::string preset = "3";

  auto* gravity_cmd = app.add_subcommand("calibrate-gravity", "fit the orientation-dependent sensor bias");
  add_common(gravity_cmd, gravity_opts);
  auto* frames_cmd = app.add_subcommand("calibrate-frames", "estimate the tissue-sensor rotation");
  add_common(frames_cmd, frames_opts);
  auto* train_cmd = app.add_subcommand("train-tipforce", "train the tip-force network");
  add_common(train_cmd, train_opts);
  auto* validation_cmd = app.add_subcommand("run-validation", "run a validation experiment");
  validation_cmd->add_option("id", validation_id, "1, 2, 2b-no-contact or 3")
      ->required()
      ->check(CLI::IsMember({"1", "2", "2b-no-contact", "3"}));
  add_common(validation_cmd, validation_opts);
  auto* sim_cmd = app.add_subcommand("simulate", "write a simulated session");
  add_common(sim_cmd, sim_opts);
  sim_cmd->add_option("--preset", preset, "validation whose reference session supplies the defaults")
      ->check(CLI::IsMember({"1", "2", "3"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    if (*gravity_cmd) {
      const auto cfg = load(gravity_opts, harness::Validation::kFrames);
      const gravity::FitReport fit = harness::calibrate_gravity(cfg);
      harness::Report r;
      r.metrics = {{"residual_rms_x", fit.residual_rms.x()},
                   {"residual_rms_y", fit.residual_rms.y()},
                   {"residual_rms_z", fit.residual_rms.z()},
                   {"condition", fit.condition}};
      const gravity::Model model = fit.model;
      r.artifacts.push_back({"gravity_model.csv", [model](const auto& p) { gravity::write_model(p, model); }});
      if (cfg.gravity_input.empty()) {
        const auto set = std::make_shared<gravity::CalibrationSet>(sim::gravity_sweep(cfg.session, cfg.gravity_poses));
        r.artifacts.push_back({"gravity_set.csv", [set](const auto& p) { gravity::write_calibration_set(p, *set); }});
      }
      return finish(gravity_opts.out, r, start);
    }
    if (*frames_cmd) {
      const auto cfg = load(frames_opts, harness::Validation::kFrames);
      const frames::Calibration calib = harness::calibrate_frames(cfg);
      harness::Report r;
      r.metrics = {{"r2_x", calib.r2.x()},   {"r2_y", calib.r2.y()},   {"r2_z", calib.r2.z()},
                   {"mae_x", calib.mae.x()}, {"mae_y", calib.mae.y()}, {"mae_z", calib.mae.z()},
                   {"sd_x", calib.sd.x()},   {"sd_y", calib.sd.y()},   {"sd_z", calib.sd.z()},
                   {"residual_rms_n", calib.residual_rms}};
      r.artifacts.push_back({"calibration.csv", [calib](const auto& p) { frames::write_calibration(p, calib); }});
      return finish(frames_opts.out, r, start);
    }
    if (*train_cmd) {
      const auto cfg = load(train_opts, harness::Validation::kTipForce);
      const auto trained = std::make_shared<tipforce::TrainResult>(harness::train_tipforce(cfg));
      const auto& rep = trained->report;
      harness::Report r;
      r.metrics = {{"test_mae_x", rep.test_mae.x()}, {"test_mae_y", rep.test_mae.y()},
                   {"test_mae_z", rep.test_mae.z()}, {"test_sd_x", rep.test_sd.x()},
                   {"test_sd_y", rep.test_sd.y()},   {"test_sd_z", rep.test_sd.z()},
                   {"best_epoch", static_cast<double>(rep.best_epoch)}};
      r.artifacts.push_back({"tipforce_model.txt", [trained](const auto& p) { trained->model.save(p); }});
      return finish(train_opts.out, r, start);
    }
    if (*validation_cmd) {
      const auto cfg = load(validation_opts, harness::parse_validation(validation_id));
      harness::Report r = harness::run_validation(cfg);
      return finish(validation_opts.out, r, start);
    }
    if (*sim_cmd) {
      const auto cfg = load(sim_opts, harness::parse_validation(preset));
      const sim::SessionLog log = sim::run_session(cfg.session, cfg.tissue, cfg.rcm);
      sim::write_session(sim_opts.out, log);
      std::printf("wrote %zu commands, %zu follower samples to %s\n", log.commands.size(), log.follower.size(),
                  sim_opts.out.c_str());
      return kPass;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kUsage;
}
