#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <thread>

#include "nima/error.hpp"
#include "nima/nima.hpp"
#include "oracles.hpp"

using namespace nima;
using namespace nima::impedance;
using std::numbers::pi;

namespace {

struct Sine {
  double amp, hz, phase;
};

// Analytic multi-sine motion, one list of components per axis.
MotionSample motion_at(double t_ms, const std::array<std::vector<Sine>, 3>& sines, const Vec3& offset) {
  MotionSample s;
  s.t_ms = t_ms;
  const double t = t_ms / 1000.0;
  for (int a = 0; a < 3; ++a) {
    s.pos(a) = offset(a);
    for (const Sine& c : sines[static_cast<std::size_t>(a)]) {
      const double w = 2 * pi * c.hz;
      s.pos(a) += c.amp * std::sin(w * t + c.phase);
      s.vel(a) += c.amp * w * std::cos(w * t + c.phase);
      s.acc(a) -= c.amp * w * w * std::sin(w * t + c.phase);
    }
  }
  return s;
}

const std::array<std::vector<Sine>, 3> kSines{{{{10, 0.7, 0}, {4, 1.9, 0.3}, {2, 3.7, 1}},
                                              {{10, 0.53, 1}, {4, 2.3, 2}, {2, 4.1, 0.5}},
                                              {{1.5, 1.7, 0}, {0.75, 3.1, 1}}}};

using ForceLaw = std::function<Vec3(const MotionSample&)>;

WindowSnapshot make_window(double t0_ms, std::size_t n, const ForceLaw& law, oracle::Gen* g = nullptr,
                           double sd = 0.0) {
  WindowSnapshot w;
  for (std::size_t i = 0; i < n; ++i) {
    const MotionSample s = motion_at(t0_ms + static_cast<double>(i), kSines, Vec3(0, 0, -2.75));
    w.motion.push_back(s);
    w.force.push_back(law(s) + (g ? g->noise(sd) : Vec3::Zero()));
  }
  return w;
}

Vec3 cubic_tissue(const MotionSample& s) {
  const double d = -s.pos.z(), dd = -s.vel.z();
  return {0, 0, 0.3 * d + 0.05 * d * d * d + 0.002 * dd};
}

}  // namespace

TEST_CASE("augmented state layout") {
  MotionSample s;
  s.pos = Vec3(1, 2, 3);
  s.vel = Vec3(0.5, -1, 2);
  s.acc = Vec3(-2, 0, 1);
  Eigen::VectorXd x1(9);
  x1 << 1, 0.5, -2, 2, -1, 0, 3, 2, 1;
  CHECK(augment(s, 1) == x1);
  const Eigen::VectorXd x2 = augment(s, 2);
  REQUIRE(x2.size() == 18);
  Eigen::VectorXd xblock(6);
  xblock << 1, 0.5, -2, 1, 0.25, 4;
  CHECK(x2.head(6) == xblock);
  CHECK(x2(6 + 3) == 4.0);  // y^2
  CHECK(x2(12 + 5) == 1.0);  // (z'')^2
  oracle::Gen g(60);
  for (int n = 1; n <= 5; ++n) {
    s.pos = g.vec(-3, 3);
    s.vel = g.vec(-3, 3);
    s.acc = g.vec(-3, 3);
    const Eigen::VectorXd x = augment(s, n);
    for (int a = 0; a < 3; ++a)
      for (int k = 1; k <= n; ++k) {
        CHECK(x(a * 3 * n + 3 * (k - 1)) == doctest::Approx(std::pow(s.pos(a), k)).epsilon(1e-13));
        CHECK(x(a * 3 * n + 3 * (k - 1) + 2) == doctest::Approx(std::pow(s.acc(a), k)).epsilon(1e-13));
      }
  }
  CHECK_THROWS_AS(augment(s, 0), DataError);
  CHECK_THROWS_AS(augment(s, 6), DataError);
}

TEST_CASE("identify: pure stiffness and zero force") {
  const WindowSnapshot w = make_window(0, 300, [](const MotionSample& s) { return Vec3(2 * s.pos.x(), 0, 0); });
  const ImpedanceMatrix m = identify(w, 1);
  CHECK((m.rows[0] - Eigen::Vector3d(2, 0, 0)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(m.rows[1].cwiseAbs().maxCoeff() < 1e-12);
  CHECK(m.rows[2].cwiseAbs().maxCoeff() < 1e-12);
  CHECK(m.assembled().rows() == 3);
  CHECK(m.assembled().cols() == 9);

  const ImpedanceMatrix z = identify(make_window(0, 300, [](const MotionSample&) { return Vec3::Zero(); }), 3);
  for (const auto& r : z.rows) CHECK(r.isZero());
}

TEST_CASE("identify: cubic law with damping is reproduced") {
  const WindowSnapshot w = make_window(1000, 300, [](const MotionSample& s) {
    return Vec3(0, 0, 0.5 * std::pow(s.pos.z(), 3) + 0.1 * s.vel.z());
  });
  const ImpedanceMatrix m = identify(w, 3);
  CHECK(reconstruction_mae(m, w) < 1e-6);
  CHECK(m.rows[2](6) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(m.rows[2](1) == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("exact recovery of random degree-3 impedances") {
  oracle::Gen g(61);
  for (int t = 0; t < 10; ++t) {
    std::array<Eigen::VectorXd, 3> truth;
    for (auto& r : truth) {
      r = Eigen::VectorXd(9);
      for (int i = 0; i < 9; ++i) r(i) = g.uniform(-1, 1) * std::pow(0.1, i / 3 + i % 3);
    }
    ImpedanceMatrix tm;
    tm.degree = 3;
    tm.rows = truth;
    const WindowSnapshot w =
        make_window(g.uniform(0, 20000), 300, [&](const MotionSample& s) { return tm.apply(augment(s, 3)); });
    const ImpedanceMatrix m = identify(w, 3);
    CHECK(reconstruction_mae(m, w) < 1e-6);
    CHECK((m.assembled() - tm.assembled()).cwiseAbs().maxCoeff() / tm.assembled().cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("identify matches the SVD oracle per axis") {
  oracle::Gen g(62);
  const WindowSnapshot w = make_window(500, 300, cubic_tissue, &g, 0.03);
  for (int n = 1; n <= 3; ++n) {
    const ImpedanceMatrix m = identify(w, n);
    for (int a = 0; a < 3; ++a) {
      const Eigen::MatrixXd A = axis_regressors(w, a, n);
      Eigen::VectorXd f(static_cast<Eigen::Index>(w.size()));
      for (std::size_t i = 0; i < w.size(); ++i) f(static_cast<Eigen::Index>(i)) = w.force[i](a);
      // equilibrate the oracle too so the rank decision agrees
      const Eigen::VectorXd sc = A.colwise().norm();
      const Eigen::MatrixXd As = A * sc.cwiseInverse().asDiagonal();
      const Eigen::VectorXd ref = sc.cwiseInverse().asDiagonal() * oracle::least_squares(As, f, 1e-8);
      const Eigen::VectorXd got = m.rows[static_cast<std::size_t>(a)];
      CHECK((got - ref).norm() <= 1e-7 * std::max(1.0, ref.norm()));
      // normal equations: residual orthogonal to the regressors
      const Eigen::VectorXd r = f - A * got;
      CHECK((As.transpose() * r).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, f.norm()));
    }
  }
}

TEST_CASE("per-axis fits are decoupled") {
  oracle::Gen g(63);
  WindowSnapshot w = make_window(200, 300, cubic_tissue, &g, 0.02);
  const ImpedanceMatrix a = identify(w, 2);
  for (auto& f : w.force) f.x() += 3.0 * f.z() - 1.0;
  const ImpedanceMatrix b = identify(w, 2);
  CHECK(a.rows[1] == b.rows[1]);
  CHECK(a.rows[2] == b.rows[2]);
  CHECK((a.rows[0] - b.rows[0]).norm() > 1e-3);
}

TEST_CASE("in-window error does not grow with degree") {
  oracle::Gen g(64);
  for (int t = 0; t < 5; ++t) {
    const WindowSnapshot w = make_window(g.uniform(0, 20000), 300, cubic_tissue, &g, 0.05);
    const Selection s = select_degree(w);
    for (int n = 1; n < kMaxDegree; ++n) {
      if (s.mae[n] < 0 || s.mae[n - 1] < 0) continue;
      // nested least squares: the squared error is monotone; MAE tracks it closely
      CHECK(s.mae[n] <= s.mae[n - 1] + 1e-3);
    }
    double sse_prev = INFINITY;
    for (int n = 1; n <= 5; ++n) {
      const ImpedanceMatrix m = identify(w, n);
      double sse = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) sse += (m.apply(augment(w.motion[i], n)) - w.force[i]).squaredNorm();
      CHECK(sse <= sse_prev * (1 + 1e-9));
      sse_prev = sse;
    }
  }
}

TEST_CASE("degree selection") {
  oracle::Gen g(65);
  // linear noiseless law: every degree fits equally, the smallest wins
  const WindowSnapshot lin = make_window(0, 300, [](const MotionSample& s) {
    return Vec3(0.2 * s.pos.x(), 0.0, -0.3 * s.pos.z() - 0.002 * s.vel.z());
  });
  CHECK(select_degree(lin).selected == 1);

  int nonlinear = 0;
  for (int t = 0; t < 10; ++t) {
    const WindowSnapshot w = make_window(g.uniform(0, 20000), 300, cubic_tissue, &g, 0.005);
    const Selection s = select_degree(w);
    CHECK(s.selected >= 1);
    nonlinear += s.selected >= 3;
    CHECK(s.model.degree == s.selected);
  }
  CHECK(nonlinear >= 8);

  SelectionOptions only2;
  only2.min_degree = 2;
  only2.max_degree = 2;
  const Selection s2 = select_degree(lin, only2);
  CHECK(s2.selected == 2);
  CHECK(s2.mae[0] == -1.0);
  CHECK(s2.mae[4] == -1.0);

  SelectionOptions hold;
  hold.mode = DegreeSelection::kHoldout;
  const Selection sh = select_degree(make_window(3000, 300, cubic_tissue, &g, 0.005), hold);
  CHECK(sh.selected >= 2);

  SelectionOptions par;
  par.parallel = true;
  const WindowSnapshot w = make_window(4000, 300, cubic_tissue, &g, 0.01);
  const Selection a = select_degree(w), b = select_degree(w, par);
  CHECK(a.selected == b.selected);
  CHECK(a.mae == b.mae);

  SelectionOptions bad;
  bad.min_degree = 4;
  bad.max_degree = 2;
  CHECK_THROWS_AS(select_degree(w, bad), DataError);
}

TEST_CASE("stationary or short windows are poorly excited") {
  WindowSnapshot still;
  for (int i = 0; i < 300; ++i) {
    MotionSample s;
    s.t_ms = i;
    s.pos = Vec3(1, 2, -1);
    still.motion.push_back(s);
    still.force.push_back(Vec3(0, 0, 0.3));
  }
  CHECK_THROWS_AS(identify(still, 1), PoorlyExcited);
  CHECK_THROWS_AS(select_degree(still), PoorlyExcited);
  try {
    identify(still, 2);
  } catch (const PoorlyExcited& e) {
    CHECK(e.degree() == 2);
    CHECK(e.rank() < 6);
  }
  const WindowSnapshot tiny = make_window(0, 10, cubic_tissue);
  CHECK_THROWS_AS(identify(tiny, 2), InsufficientData);
}

TEST_CASE("render: examples and the velocity gate") {
  ImpedanceMatrix m;
  m.degree = 1;
  m.rows = {Eigen::Vector3d(2, 0, 0), Eigen::Vector3d(0, 1, 0), Eigen::Vector3d(-1, 0, 0.5)};
  MotionSample s;
  s.pos = Vec3(1, 1, 2);
  s.vel = Vec3(0, 3, 0);
  s.acc = Vec3(0, 0, 4);
  RenderedForce r = render(m, s);
  CHECK(r.force == Vec3(2, 3, 0));
  CHECK_FALSE(r.gated);
  CHECK(r.degree_used == 1);

  s.vel = Vec3(0.5, 0.5, 0.5);  // |v| < 1 mm/s
  r = render(m, s);
  CHECK(r.gated);
  CHECK(r.force == Vec3::Zero());
  CHECK(r.degree_used == 1);

  s.vel = Vec3(0.0, 0.0, 1.0);  // exactly at the gate renders
  CHECK_FALSE(render(m, s).gated);

  CHECK(render(ImpedanceMatrix{}, s).force == Vec3::Zero());
  CHECK(render(ImpedanceMatrix{}, s).degree_used == 0);
  CHECK_THROWS_AS(m.apply(augment(s, 2)), DataError);

  oracle::Gen g(66);
  for (int i = 0; i < 200; ++i) {
    s.pos = g.vec(-100, 100);
    s.acc = g.vec(-1000, 1000);
    s.vel = g.vec(-1, 1) * 0.57;
    CHECK(render(m, s).force == Vec3::Zero());
  }
}

TEST_CASE("differentiation accuracy") {
  std::vector<TimedPosition> c, ramp, sine;
  for (int i = 0; i < 2000; ++i) {
    const double t = i;  // ms
    c.push_back({t, Vec3(1, -2, 3)});
    ramp.push_back({t, Vec3(2 * t / 1000, 0, -t / 1000)});
    const double w = 2 * pi * 1.3;
    sine.push_back({t, Vec3(std::sin(w * t / 1000), 0, 0)});
  }
  for (const auto& s : differentiate_stream(c)) {
    CHECK(s.vel.cwiseAbs().maxCoeff() < 1e-9);
    CHECK(s.acc.cwiseAbs().maxCoeff() < 1e-6);
  }
  for (const auto& s : differentiate_stream(ramp)) {
    CHECK((s.vel - Vec3(2, 0, -1)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(s.acc.cwiseAbs().maxCoeff() < 1e-4);
  }
  const MotionStream ms = differentiate_stream(sine);
  const double w = 2 * pi * 1.3;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const double t = ms[i].t_ms / 1000;
    CHECK(std::abs(ms[i].vel.x() - w * std::cos(w * t)) / w < 1e-4);
    CHECK(std::abs(ms[i].acc.x() + w * w * std::sin(w * t)) / (w * w) < 1e-4);
  }

  CHECK_THROWS_AS(differentiate_stream(std::span(c).first(4)), InsufficientData);
  auto jitter = c;
  jitter[100].t_ms += 0.3;
  CHECK_THROWS_AS(differentiate_stream(jitter), DataError);
}

TEST_CASE("direct force reflection") {
  std::vector<TimedForce> imp, zero, sine;
  for (int i = 0; i < 1000; ++i) {
    imp.push_back({double(i), i == 10 ? Vec3(1, 2, 3) : Vec3::Zero()});
    zero.push_back({double(i), Vec3::Zero()});
    sine.push_back({double(i), Vec3(std::sin(2 * pi * 2.1 * i / 1000), 0, 0)});
  }
  const auto d = dfr_baseline(imp, 300);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d[i].t_ms == imp[i].t_ms);
    CHECK(d[i].force == (i == 310 ? Vec3(1, 2, 3) : Vec3::Zero()));
  }
  for (const auto& s : dfr_baseline(zero, 300)) CHECK(s.force == Vec3::Zero());

  // the delayed stream lines up with the input at the delay
  const auto ds = dfr_baseline(sine, 120);
  int best = -1;
  double best_c = -INFINITY;
  for (int lag = 0; lag < 300; ++lag) {
    double c = 0.0;
    for (std::size_t i = 300; i < 1000; ++i) c -= std::abs(ds[i].force.x() - sine[i - lag].force.x());
    if (c > best_c) {
      best_c = c;
      best = lag;
    }
  }
  CHECK(best == 120);
  auto bad = sine;
  bad[500].t_ms += 0.5;
  CHECK_THROWS_AS(dfr_baseline(bad, 100), DataError);
}

TEST_CASE("rolling window is a bounded FIFO") {
  RollingWindow w(300, 1000);
  CHECK(w.capacity() == 300);
  for (int i = 0; i < 450; ++i) {
    MotionSample s;
    s.t_ms = i;
    w.push(s, Vec3::Constant(i));
    CHECK(w.size() == std::min(i + 1, 300));
  }
  CHECK(w.full());
  const auto snap = w.snapshot();
  CHECK(snap->motion.front().t_ms == 150);
  CHECK(snap->t_end_ms() == 449);
  CHECK(snap->force.back() == Vec3::Constant(449));
  w.clear();
  CHECK(w.size() == 0);
  CHECK(snap->size() == 300);  // snapshot unaffected
  CHECK_THROWS_AS(RollingWindow(0.5, 1000), DataError);
}

TEST_CASE("triple buffer") {
  TripleBuffer<int> b(7);
  CHECK(b.front() == 7);
  CHECK_FALSE(b.refresh());
  b.publish(1);
  b.publish(2);
  CHECK(b.refresh());
  CHECK(b.front() == 2);
  CHECK_FALSE(b.refresh());

  // concurrent writer: the reader only ever sees increasing, fully written values
  TripleBuffer<std::array<int, 64>> tb{};
  std::thread writer([&] {
    for (int v = 1; v <= 20000; ++v) {
      std::array<int, 64> a;
      a.fill(v);
      tb.publish(a);
    }
  });
  int last = 0;
  bool torn = false, regressed = false;
  while (last < 20000) {
    if (tb.refresh()) {
      const auto& a = tb.front();
      for (int x : a) torn |= x != a[0];
      regressed |= a[0] < last;
      last = a[0];
    }
  }
  writer.join();
  CHECK_FALSE(torn);
  CHECK_FALSE(regressed);
}

TEST_CASE("background identifier publishes models without blocking") {
  SelectionOptions opt;
  BackgroundIdentifier bg(opt);
  CHECK_FALSE(bg.latest().valid());
  oracle::Gen g(67);
  bg.submit(std::make_shared<const WindowSnapshot>(make_window(0, 300, cubic_tissue, &g, 0.005)));
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  while (bg.completed() == 0 && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  REQUIRE(bg.completed() >= 1);
  CHECK(bg.latest().valid());
}

TEST_CASE("engine replay is causal and deterministic") {
  oracle::Gen g(68);
  MotionStream motion;
  std::vector<Vec3> measured, reference;
  for (int i = 0; i < 2000; ++i) {
    const MotionSample s = motion_at(i, kSines, Vec3(0, 0, -2.75));
    motion.push_back(s);
    reference.push_back(cubic_tissue(s));
    measured.push_back(reference.back() + g.noise(0.01));
  }
  EngineConfig cfg;
  cfg.identify_every_ms = 20;
  const EngineRun a = run_engine(motion, measured, reference, cfg);
  const EngineRun b = run_engine(motion, measured, reference, cfg);
  REQUIRE(a.nima.size() == motion.size());
  for (std::size_t i = 0; i < a.nima.size(); ++i) {
    CHECK(a.nima[i].rendered == b.nima[i].rendered);
  }
  // no model until the first full window has been identified, and never on the same sample
  for (std::size_t i = 0; i < 300; ++i) CHECK(a.nima[i].degree_used == 0);
  CHECK(a.nima[300].degree_used > 0);
  CHECK(a.windows.size() == (2000 - 300) / 20 + 1);

  // a future change in the measured stream cannot affect earlier renders
  auto altered = measured;
  for (std::size_t i = 1500; i < altered.size(); ++i) altered[i] *= 3.0;
  const EngineRun c = run_engine(motion, altered, reference, cfg);
  for (std::size_t i = 0; i <= 1500; ++i) CHECK(c.nima[i].rendered == a.nima[i].rendered);

  double err = 0.0, err_lin = 0.0;
  for (std::size_t i = 400; i < a.nima.size(); ++i) {
    err += (a.nima[i].rendered - a.nima[i].reference).cwiseAbs().mean();
    err_lin += (a.linear_ima[i].rendered - a.linear_ima[i].reference).cwiseAbs().mean();
  }
  CHECK(err < 0.5 * err_lin);

  cfg.model_latency_ms = 50;
  const EngineRun late = run_engine(motion, measured, reference, cfg);
  CHECK(late.nima[340].degree_used == 0);
  CHECK(late.nima[350].degree_used > 0);

  CHECK_THROWS_AS(run_engine(motion, std::span(measured).first(10), reference, cfg), DataError);
}

TEST_CASE("render log round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "nima_engine_io";
  std::filesystem::create_directories(dir);
  std::vector<RenderRecord> log{{0.5, Vec3(1, 2, 3), Vec3(0.1, 0.2, 0.3), 3, false},
                                {1.5, Vec3::Zero(), Vec3(4, 5, 6), 2, true}};
  write_render_log((dir / "r.csv").string(), log);
  const auto back = read_render_log((dir / "r.csv").string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].rendered == log[0].rendered);
  CHECK(back[1].gated);
  CHECK(back[0].degree_used == 3);
  write_window_log((dir / "w.csv").string(), {{10.0, 3, {0.1, 0.05, 0.01, 0.01, 0.01}, 12.0}});
  CHECK(std::filesystem::file_size(dir / "w.csv") > 0);
}
