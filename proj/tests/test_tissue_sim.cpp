#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "nima/error.hpp"
#include "nima/tissue_sim.hpp"
#include "oracles.hpp"

using namespace nima;
using namespace nima::sim;

namespace {

SessionLog short_session(TrajectoryKind kind, double noise, bool friction, std::uint64_t seed = 3,
                         double duration = 6.0) {
  SessionConfig c;
  c.trajectory = kind;
  c.duration_s = duration;
  c.noise_sd_n = noise;
  c.seed = seed;
  TissueModel t;
  t.shear_damping = 0.01;
  RcmFrictionModel r;
  r.enabled = friction;
  return run_session(c, t, r);
}

}  // namespace

TEST_CASE("contact force examples") {
  TissueModel lin;
  lin.k1 = 2.0;
  lin.k3 = 0.0;
  lin.damping = 0.0;
  CHECK(contact_force(lin, 3.0, 0.0) == Vec3(0, 0, 6));
  TissueModel cub;
  cub.k1 = 0.0;
  cub.k3 = 0.5;
  cub.damping = 0.0;
  CHECK(contact_force(cub, 2.0, 0.0).z() == doctest::Approx(4.0));
  TissueModel def;
  CHECK(contact_force(def, 0.0, 5.0) == Vec3::Zero());
  CHECK(contact_force(def, -1.0, 5.0) == Vec3::Zero());
  // never adhesive, even when withdrawing fast
  CHECK(contact_force(def, 0.5, -1e4).z() == 0.0);
  TissueModel ex;
  ex.law = TissueLaw::kExponential;
  ex.damping = 0.0;
  CHECK(contact_force(ex, 2.0, 0.0).z() == doctest::Approx(0.3 * (std::exp(1.0) - 1.0)));
}

TEST_CASE("contact force is continuous at the surface") {
  TissueModel t;
  t.shear_damping = 0.01;
  oracle::Gen g(70);
  for (int i = 0; i < 100; ++i) {
    const Vec3 v = g.vec(-50, 50);
    const Vec3 near = t.force(Vec3(0, 0, -1e-9), v);
    CHECK(near.norm() < 1e-6);
    CHECK(t.force(Vec3(1, 2, 1e-9), v) == Vec3::Zero());
  }
  // monotone in depth at zero rate
  double prev = 0.0;
  for (double d = 0.0; d < 6.0; d += 0.01) {
    const double f = t.normal_force(d, 0.0);
    CHECK(f >= prev);
    prev = f;
  }
}

TEST_CASE("RCM friction opposes sliding along the shaft") {
  RcmFrictionModel r;
  oracle::Gen g(71);
  for (int i = 0; i < 200; ++i) {
    Vec3 dir = g.vec(-1, 1);
    dir.z() = -std::abs(dir.z()) - 0.2;
    dir.normalize();
    const Vec3 v = g.vec(-30, 30);
    const Vec3 f = r.force(dir, v);
    CHECK(f.dot(v) <= 1e-12);
    CHECK(f.cross(dir).norm() < 1e-12);
  }
  r.enabled = false;
  CHECK(r.force(Vec3(0, 0, -1), Vec3(0, 0, 5)) == Vec3::Zero());
}

TEST_CASE("tool orientation points the S1 z axis at the pivot") {
  oracle::Gen g(72);
  const Vec3 pivot(70, 0, 60);
  for (int i = 0; i < 50; ++i) {
    const Vec3 tip = g.vec(-30, 30);
    const RotationMatrix r = quat_to_rotation(tool_orientation(tip, pivot, g.uniform(-3, 3)));
    CHECK(is_rotation(r));
    CHECK((r.col(2) - (pivot - tip).normalized()).norm() < 1e-12);
  }
  CHECK_THROWS_AS(tool_orientation(pivot, pivot, 0.0), DegenerateInput);
}

TEST_CASE("force balance holds on every follower sample") {
  for (auto kind : {TrajectoryKind::kIndentation, TrajectoryKind::kPegTransfer, TrajectoryKind::kReleaseTest,
                    TrajectoryKind::kNoContact}) {
    const SessionLog log = short_session(kind, 0.03, true);
    for (const auto& s : log.follower) {
      CHECK((s.f1_world + s.f2_world + s.f3_world).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("without friction or noise the robot-side force mirrors the tip force") {
  const SessionLog log = short_session(TrajectoryKind::kIndentation, 0.0, false);
  for (const auto& s : log.follower) {
    const RotationMatrix r = quat_to_rotation(s.q);
    CHECK((s.f1_sensor + r.transpose() * s.f3_world).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((s.tissue_sensor - log.world_from_s2.transpose() * s.f3_world).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("no-contact sessions never touch the tissue") {
  const SessionLog log = short_session(TrajectoryKind::kNoContact, 0.03, true, 9, 10.0);
  for (const auto& s : log.follower) {
    CHECK(s.penetration_mm <= 0.0);
    CHECK(s.f3_world == Vec3::Zero());
  }
}

TEST_CASE("sessions are deterministic per seed") {
  const SessionLog a = short_session(TrajectoryKind::kPegTransfer, 0.03, true, 5);
  const SessionLog b = short_session(TrajectoryKind::kPegTransfer, 0.03, true, 5);
  const SessionLog c = short_session(TrajectoryKind::kPegTransfer, 0.03, true, 6);
  REQUIRE(a.follower.size() == b.follower.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.follower.size(); ++i) {
    CHECK(a.follower[i].f1_sensor == b.follower[i].f1_sensor);
    differs |= a.follower[i].f1_sensor != c.follower[i].f1_sensor;
  }
  CHECK(differs);
}

TEST_CASE("follower executes the command stream after the delay") {
  SessionConfig c;
  c.duration_s = 4.0;
  c.delay_ms = 150.0;
  c.noise_sd_n = 0.0;
  const SessionLog log = run_session(c, TissueModel{}, RcmFrictionModel{false});
  CHECK(log.commands.size() == 4000);
  CHECK(log.follower.size() == static_cast<std::size_t>((4.0 + 0.15) * 2000));
  // cross-correlate commanded and executed x
  int best = -1;
  double best_c = -INFINITY;
  for (int lag = 0; lag < 300; ++lag) {
    double s = 0.0;
    for (std::size_t j = 400; j < 3500; ++j) {
      const std::size_t k = 2 * (j + static_cast<std::size_t>(lag));
      s -= std::abs(log.follower[k].pos.x() - log.commands[j].pos.x());
    }
    if (s > best_c) {
      best_c = s;
      best = lag;
    }
  }
  CHECK(best == 150);

  const auto idx = aligned_indices(log);
  REQUIRE(idx.size() == log.commands.size());
  for (std::size_t j = 0; j < idx.size(); j += 97) {
    CHECK((log.follower[idx[j]].pos - log.commands[j].pos).norm() < 1e-12);
  }
  c.delay_ms = 0.0;
  CHECK_THROWS_AS(run_session(c, TissueModel{}, RcmFrictionModel{}), ConfigError);
}

TEST_CASE("trajectories are twice differentiable") {
  for (auto kind : {TrajectoryKind::kIndentation, TrajectoryKind::kPegTransfer, TrajectoryKind::kReleaseTest,
                    TrajectoryKind::kNoContact}) {
    SessionConfig c;
    c.trajectory = kind;
    c.duration_s = 8.0;
    const auto cmd = generate_trajectory(c, RcmFrictionModel{});
    for (std::size_t j = 1; j + 1 < cmd.size(); ++j) {
      const Vec3 v = (cmd[j + 1].pos - cmd[j - 1].pos) / 0.002;
      const Vec3 a = (cmd[j + 1].vel - cmd[j - 1].vel) / 0.002;
      CHECK((v - cmd[j].vel).cwiseAbs().maxCoeff() < 0.05 + 1e-3 * cmd[j].vel.norm());
      CHECK((a - cmd[j].acc).cwiseAbs().maxCoeff() < 1.0 + 1e-2 * cmd[j].acc.norm());
    }
  }
}

TEST_CASE("release test holds the handle still for at least one second") {
  SessionConfig c;
  c.trajectory = TrajectoryKind::kReleaseTest;
  c.duration_s = 6.0;
  const auto cmd = generate_trajectory(c, RcmFrictionModel{});
  const ReleasePhase ph = release_phase(c.duration_s);
  CHECK(ph.release_s < ph.resume_s);
  std::size_t still = 0;
  for (const auto& s : cmd) {
    const double t = s.t_ms / 1000;
    if (t >= ph.release_s + ph.ramp_s && t < ph.resume_s) {
      CHECK(s.vel == Vec3::Zero());
      ++still;
    }
  }
  CHECK(still >= 1000);
}

TEST_CASE("peg transfer has several insertions of different depth") {
  const SessionLog log = short_session(TrajectoryKind::kPegTransfer, 0.0, true, 8, 10.0);
  std::vector<double> depths;
  double cur = 0.0;
  for (const auto& s : log.follower) {
    if (s.penetration_mm > 0.0) {
      cur = std::max(cur, s.penetration_mm);
    } else if (cur > 0.0) {
      depths.push_back(cur);
      cur = 0.0;
    }
  }
  REQUIRE(depths.size() >= 3);
  const auto [lo, hi] = std::minmax_element(depths.begin(), depths.end());
  CHECK(*hi - *lo > 0.5);
  for (double d : depths) {
    CHECK(d >= 0.3);
    CHECK(d <= 5.5);
  }
}

TEST_CASE("derived views") {
  const SessionLog log = short_session(TrajectoryKind::kIndentation, 0.0, false);
  const auto motion = command_motion(log);
  const auto f = aligned_tip_forces(log, ForceView::kTissueSensorWorld);
  const auto ft = aligned_tip_forces(log, ForceView::kTrueTipWorld);
  REQUIRE(motion.size() == f.size());
  for (std::size_t i = 0; i < f.size(); ++i) CHECK((f[i] - ft[i]).norm() < 1e-12);

  const auto corr = correspondence_set(log);
  CHECK(corr.size() == log.follower.size());
  // f_robot = chain * camera_from_s2 * f_tip holds exactly without noise or friction
  const RotationMatrix r = log.camera_from_s2();
  for (std::size_t i = 0; i < corr.size(); i += 31) {
    CHECK((corr[i].chain * r * corr[i].f_tip - corr[i].f_robot).norm() < 1e-12);
  }

  const auto ds = tipforce_dataset(log);
  CHECK(ds.size() == motion.size());
  for (std::size_t i = 0; i < ds.size(); i += 53) CHECK((ds[i].f1 + ds[i].f3).norm() < 1e-12);

  const auto sweep = gravity_sweep(SessionConfig{}, 50);
  CHECK(sweep.size() == 50);

  CHECK(parse_trajectory(to_string(TrajectoryKind::kReleaseTest)) == TrajectoryKind::kReleaseTest);
  CHECK_THROWS_AS(parse_trajectory("spiral"), ConfigError);

  const auto dir = std::filesystem::temp_directory_path() / "nima_sim_io";
  write_session(dir, log);
  for (const char* name : {"commands.csv", "follower.csv", "tip_stream.csv", "correspondence.csv",
                           "tipforce_dataset.csv"}) {
    CHECK(std::filesystem::exists(dir / name));
  }
}
