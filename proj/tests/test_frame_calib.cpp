#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "nima/error.hpp"
#include "nima/frame_calib.hpp"
#include "nima/tissue_sim.hpp"
#include "oracles.hpp"

using namespace nima;
using namespace nima::frames;
using std::numbers::pi;

namespace {

// f_robot = chain * R * f_tip + noise
CorrespondenceSet synth(oracle::Gen& g, const RotationMatrix& r, std::size_t n, double sd, bool identity_chain) {
  CorrespondenceSet set;
  for (std::size_t i = 0; i < n; ++i) {
    Correspondence c;
    c.t_ms = static_cast<double>(i);
    c.f_tip = g.vec(-3, 3);
    c.chain = identity_chain ? RotationMatrix::Identity() : euler_to_rotation(g.euler());
    c.f_robot = c.chain * r * c.f_tip + g.noise(sd);
    set.push_back(c);
  }
  return set;
}

}  // namespace

TEST_CASE("identity rotation, noiseless") {
  oracle::Gen g(40);
  const Calibration c = estimate_rotation(synth(g, RotationMatrix::Identity(), 200, 0.0, false));
  CHECK(std::abs(c.euler.theta_x) < 1e-6);
  CHECK(std::abs(c.euler.theta_y) < 1e-6);
  CHECK(std::abs(c.euler.theta_z) < 1e-6);
}

TEST_CASE("R_z(30 deg) from 500 noiseless vectors") {
  oracle::Gen g(41);
  const RotationMatrix truth = rot_z(pi / 6);
  const Calibration c = estimate_rotation(synth(g, truth, 500, 0.0, true));
  CHECK(geodesic_angle(c.rotation, truth) < 1e-6);
  CHECK(c.mae.maxCoeff() < 1e-9);
  CHECK(c.r2.minCoeff() == doctest::Approx(1.0));
}

TEST_CASE("random rotations and chains are recovered") {
  oracle::Gen g(42);
  for (int t = 0; t < 30; ++t) {
    const RotationMatrix truth = euler_to_rotation(g.euler(3.0));
    const Calibration c = estimate_rotation(synth(g, truth, 100, 0.0, false));
    CHECK(geodesic_angle(c.rotation, truth) < 1e-6);
    CHECK(is_rotation(c.rotation));
  }
}

TEST_CASE("estimate is equivariant to a fixed rotation of the tip forces") {
  oracle::Gen g(43);
  for (int t = 0; t < 10; ++t) {
    const RotationMatrix truth = euler_to_rotation(g.euler());
    const RotationMatrix q = euler_to_rotation(g.euler());
    CorrespondenceSet set = synth(g, truth, 150, 0.0, false);
    const Calibration a = estimate_rotation(set);
    for (auto& c : set) c.f_tip = q * c.f_tip;
    const Calibration b = estimate_rotation(set);
    CHECK(geodesic_angle(b.rotation, a.rotation * q.transpose()) < 1e-6);
  }
}

TEST_CASE("solution residual is no larger than at 64 random rotations") {
  oracle::Gen g(44);
  const RotationMatrix truth = euler_to_rotation(g.euler());
  const CorrespondenceSet set = synth(g, truth, 300, 0.2, false);
  const Calibration c = estimate_rotation(set);
  const double best = objective(set, c.rotation);
  for (int i = 0; i < 64; ++i) {
    CHECK(best <= objective(set, euler_to_rotation(g.euler(3.0))));
  }
  // output rotation-valid regardless of noise
  CHECK(((c.rotation * c.rotation.transpose()) - RotationMatrix::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(std::abs(c.rotation.determinant() - 1.0) < 1e-9);
  for (int a = 0; a < 3; ++a) {
    CHECK(c.r2(a) >= 0.0);
    CHECK(c.r2(a) <= 1.0);
  }
}

TEST_CASE("transform_tip_forces") {
  Calibration id;
  CorrespondenceSet set{{0.0, Vec3::Zero(), Vec3(1, 2, 3), RotationMatrix::Identity()}};
  CHECK(transform_tip_forces(id, set)[0] == Vec3(1, 2, 3));
  Calibration rz;
  rz.rotation = rot_z(pi / 2);
  set[0].f_tip = Vec3(1, 0, 0);
  CHECK((transform_tip_forces(rz, set)[0] - Vec3(0, 1, 0)).norm() < 1e-15);
}

TEST_CASE("evaluate_correspondence: perfect data and constant offset") {
  oracle::Gen g(45);
  const RotationMatrix truth = euler_to_rotation(g.euler());
  CorrespondenceSet set = synth(g, truth, 400, 0.0, false);
  Calibration c;
  c.rotation = truth;
  AxisReport r = evaluate_correspondence(c, set);
  CHECK(r.mae.maxCoeff() < 1e-12);
  CHECK(r.r2.minCoeff() == doctest::Approx(1.0));

  for (auto& s : set) s.f_robot.y() -= 0.25;  // estimate now exceeds the reference by 0.25 on y
  r = evaluate_correspondence(c, set);
  CHECK(r.mae.y() == doctest::Approx(0.25));
  CHECK(r.r2.y() == doctest::Approx(1.0));
  CHECK(r.bias.y() == doctest::Approx(0.25));
}

TEST_CASE("simulated indentation traces at sigma 0.1 N") {
  sim::SessionConfig sc;
  sc.duration_s = 10;
  sc.noise_sd_n = 0.1;
  sc.seed = 5;
  sim::TissueModel tissue;
  tissue.shear_damping = 0.01;
  sim::RcmFrictionModel rcm;
  rcm.enabled = false;
  const sim::SessionLog log = sim::run_session(sc, tissue, rcm);
  const Calibration c = estimate_rotation(sim::correspondence_set(log));
  CHECK(c.r2.minCoeff() >= 0.95);
  for (int a = 0; a < 3; ++a) {
    CHECK(c.mae(a) >= 0.05);
    CHECK(c.mae(a) <= 0.2);
  }
  CHECK(geodesic_angle(c.rotation, log.camera_from_s2()) < 0.5 * pi / 180);
}

TEST_CASE("degenerate correspondence sets are rejected") {
  oracle::Gen g(46);
  CHECK_THROWS_AS(estimate_rotation(synth(g, RotationMatrix::Identity(), 2, 0.0, true)), InsufficientData);
  CorrespondenceSet collinear;
  for (int i = 0; i < 50; ++i) {
    const double s = g.uniform(-2, 2);
    collinear.push_back({0.0, Vec3(0, 0, s), Vec3(0, 0, s), RotationMatrix::Identity()});
  }
  CHECK_THROWS_AS(estimate_rotation(collinear), DegenerateInput);
  CorrespondenceSet bad = synth(g, RotationMatrix::Identity(), 10, 0.0, true);
  bad[3].f_tip.x() = NAN;
  CHECK_THROWS_AS(estimate_rotation(bad), DataError);
}

TEST_CASE("nearest-timestamp pairing within 1 ms") {
  std::vector<TimedForce> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back({0.5 * i, Vec3::Constant(i)});
    b.push_back({0.5 * i + 0.2, Vec3::Constant(i)});
  }
  b.erase(b.begin() + 4, b.begin() + 9);  // gap of 2.5 ms
  const auto pairs = align_by_timestamp(a, b, 1.0);
  for (const auto& [i, j] : pairs) {
    CHECK(std::abs(a[i].t_ms - b[j].t_ms) <= 1.0);
  }
  // samples 0..3 pair with themselves, 4..5 with 3 within 1 ms, 6 and 7 have no partner
  CHECK(pairs.size() == 8);
  CHECK(pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(pairs[5] == std::pair<std::size_t, std::size_t>{5, 3});
  CHECK(align_by_timestamp(a, {}, 1.0).empty());
}

TEST_CASE("correspondence and calibration files round-trip") {
  oracle::Gen g(47);
  const auto dir = std::filesystem::temp_directory_path() / "nima_frames_io";
  std::filesystem::create_directories(dir);
  const CorrespondenceSet set = synth(g, euler_to_rotation(g.euler()), 20, 0.1, false);
  write_correspondence(dir / "c.csv", set);
  const CorrespondenceSet back = read_correspondence(dir / "c.csv");
  REQUIRE(back.size() == set.size());
  CHECK(back[11].chain == set[11].chain);
  CHECK(back[11].f_robot == set[11].f_robot);
  const Calibration c = estimate_rotation(set);
  write_calibration(dir / "cal.csv", c);
  const Calibration cb = read_calibration(dir / "cal.csv");
  CHECK(cb.rotation == c.rotation);
  CHECK(cb.r2 == c.r2);
}
