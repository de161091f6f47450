#include "nima/nima.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

#include <Eigen/Dense>

#include "nima/csv.hpp"
#include "nima/linalg.hpp"

namespace nima::impedance {

namespace {

void check_degree(int degree) {
  if (degree < kMinDegree || degree > kMaxDegree) {
    throw DataError("impedance degree must be in [1, 5], got " + std::to_string(degree));
  }
}

// Weights w with sum_j w_j f(x + o_j h) ~= h^order f^(order)(x).
Eigen::Matrix<double, 5, 1> stencil(const std::array<int, 5>& offsets, int order) {
  Eigen::Matrix<double, 5, 5> v;
  for (int k = 0; k < 5; ++k) {
    for (int j = 0; j < 5; ++j) {
      v(k, j) = std::pow(static_cast<double>(offsets[static_cast<std::size_t>(j)]), k);
    }
  }
  Eigen::Matrix<double, 5, 1> rhs = Eigen::Matrix<double, 5, 1>::Zero();
  rhs(order) = order == 2 ? 2.0 : 1.0;
  return v.fullPivLu().solve(rhs);
}

std::vector<Vec3> moving_average(const std::vector<Vec3>& in, int window) {
  const int half = window / 2;
  const int n = static_cast<int>(in.size());
  std::vector<Vec3> out(in.size(), Vec3::Zero());
  for (int i = 0; i < n; ++i) {
    const int h = std::min({half, i, n - 1 - i});
    Vec3 s = Vec3::Zero();
    for (int k = -h; k <= h; ++k) {
      s += in[static_cast<std::size_t>(i + k)];
    }
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(2 * h + 1);
  }
  return out;
}

struct AxisFit {
  Eigen::VectorXd coefficients;
  int rank = 0;
  double smallest = 0.0;
  double condition = 0.0;
};

// Least squares over the leading columns of one regressor matrix. Columns are
// scaled to unit norm and factored once (A = QR); the fit on the first p
// columns is the truncated-SVD pseudo-inverse of the leading p x p block of R,
// whose singular values are those of the leading p columns of A.
class NestedAxisSolver {
public:
  NestedAxisSolver(const Eigen::MatrixXd& a, const Eigen::VectorXd& f, double cutoff) : cutoff_(cutoff) {
    scale_ = a.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < scale_.size(); ++j) {
      if (scale_(j) == 0.0) scale_(j) = 1.0;
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a * scale_.cwiseInverse().asDiagonal());
    const Eigen::Index k = std::min(a.rows(), a.cols());
    r_ = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    qtf_ = (qr.householderQ().transpose() * f).head(k);
  }

  AxisFit solve(Eigen::Index p) const {
    AxisFit out;
    out.coefficients = Eigen::VectorXd::Zero(p);
    const Eigen::Index k = std::min(p, r_.rows());
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(r_.topLeftCorner(k, p), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double top = sv.size() > 0 ? sv(0) : 0.0;
    Eigen::VectorXd coeff = Eigen::VectorXd::Zero(p);
    const Eigen::VectorXd uty = svd.matrixU().transpose() * qtf_.head(k);
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      if (top > 0.0 && sv(i) > cutoff_ * top) {
        coeff += svd.matrixV().col(i) * (uty(i) / sv(i));
        out.rank += 1;
        out.smallest = sv(i);
      }
    }
    out.condition = out.rank > 0 ? top / out.smallest : std::numeric_limits<double>::infinity();
    out.coefficients = coeff.cwiseQuotient(scale_.head(p));
    return out;
  }

private:
  double cutoff_;
  Eigen::VectorXd scale_;
  Eigen::MatrixXd r_;
  Eigen::VectorXd qtf_;
};

// Regressors of all three axes at the highest degree needed; lower degrees use leading columns.
std::array<Eigen::MatrixXd, 3> all_regressors(const WindowSnapshot& w, int degree) {
  return {axis_regressors(w, 0, degree), axis_regressors(w, 1, degree), axis_regressors(w, 2, degree)};
}

using AxisSolvers = std::array<NestedAxisSolver, 3>;

AxisSolvers make_solvers(const std::array<Eigen::MatrixXd, 3>& regs, const WindowSnapshot& w, std::size_t rows,
                         const IdentifyOptions& options) {
  const auto n = static_cast<Eigen::Index>(rows);
  auto one = [&](int axis) {
    Eigen::VectorXd target(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      target(i) = w.force[static_cast<std::size_t>(i)](axis);
    }
    return NestedAxisSolver(regs[static_cast<std::size_t>(axis)].topRows(n), target, options.relative_cutoff);
  };
  return {one(0), one(1), one(2)};
}

void check_rows(std::size_t rows, int degree) {
  if (rows < static_cast<std::size_t>(3 * degree + 5)) {
    throw InsufficientData("identification at degree " + std::to_string(degree) + " needs at least " +
                           std::to_string(3 * degree + 5) + " samples, window has " + std::to_string(rows));
  }
}

ImpedanceMatrix identify_from(const AxisSolvers& solvers, std::size_t rows, int degree) {
  const Eigen::Index p = 3 * degree;
  check_rows(rows, degree);
  ImpedanceMatrix m;
  m.degree = degree;
  m.samples = rows;
  m.smallest_retained = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const AxisFit fit = solvers[static_cast<std::size_t>(axis)].solve(p);
    if (fit.rank < p) {
      throw PoorlyExcited("window is poorly excited on axis " + std::to_string(axis) + " at degree " +
                              std::to_string(degree) + ": rank " + std::to_string(fit.rank) + "/" +
                              std::to_string(p) + ", condition " + std::to_string(fit.condition),
                          degree, fit.rank, fit.condition);
    }
    m.rows[static_cast<std::size_t>(axis)] = fit.coefficients;
    m.smallest_retained = std::min(m.smallest_retained, fit.smallest);
    m.condition = std::max(m.condition, fit.condition);
  }
  return m;
}

double reconstruction_mae_rows(const ImpedanceMatrix& m, const std::array<Eigen::MatrixXd, 3>& regs,
                               const WindowSnapshot& w, std::size_t begin, std::size_t end) {
  const Eigen::Index p = 3 * m.degree;
  double total = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    const auto& r = regs[static_cast<std::size_t>(axis)];
    for (std::size_t i = begin; i < end; ++i) {
      const double pred = r.row(static_cast<Eigen::Index>(i)).head(p).dot(m.rows[static_cast<std::size_t>(axis)]);
      total += std::abs(pred - w.force[i](axis));
    }
  }
  return total / (3.0 * static_cast<double>(end - begin));
}

}  // namespace

MotionStream differentiate_stream(std::span<const TimedPosition> positions, const DifferentiationOptions& options) {
  const std::size_t n = positions.size();
  if (n < 5) {
    throw InsufficientData("differentiation needs at least 5 samples, got " + std::to_string(n));
  }
  std::vector<double> steps(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    steps[i] = positions[i + 1].t_ms - positions[i].t_ms;
  }
  std::vector<double> sorted = steps;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  if (!(median > 0.0)) {
    throw DataError("differentiation: timestamps are not increasing");
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (std::abs(steps[i] - median) > options.max_jitter * median) {
      throw DataError("differentiation: sampling step " + std::to_string(steps[i]) + " ms at index " +
                      std::to_string(i) + " deviates from " + std::to_string(median) +
                      " ms beyond the jitter bound; resampling required");
    }
  }
  const double h = (positions[n - 1].t_ms - positions[0].t_ms) / static_cast<double>(n - 1) / 1000.0;  // s

  std::vector<Vec3> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = positions[i].pos;
  }
  for (int pass = 0; pass < options.smoothing_passes; ++pass) {
    p = moving_average(p, options.smoothing_window);
  }

  static const std::array<std::array<int, 5>, 5> kOffsets{{
      {0, 1, 2, 3, 4}, {-1, 0, 1, 2, 3}, {-2, -1, 0, 1, 2}, {-3, -2, -1, 0, 1}, {-4, -3, -2, -1, 0}}};
  static const auto kWeights = [] {
    std::array<std::array<Eigen::Matrix<double, 5, 1>, 2>, 5> w;
    for (std::size_t s = 0; s < 5; ++s) {
      w[s] = {stencil(kOffsets[s], 1), stencil(kOffsets[s], 2)};
    }
    return w;
  }();

  MotionStream out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t s = 2;
    if (i < 2) {
      s = i;
    } else if (i + 2 >= n) {
      s = 4 - (n - 1 - i);
    }
    Vec3 d1 = Vec3::Zero(), d2 = Vec3::Zero();
    for (std::size_t j = 0; j < 5; ++j) {
      const Vec3& u = p[static_cast<std::size_t>(static_cast<long>(i) + kOffsets[s][j])];
      d1 += kWeights[s][0](static_cast<Eigen::Index>(j)) * u;
      d2 += kWeights[s][1](static_cast<Eigen::Index>(j)) * u;
    }
    out[i] = {positions[i].t_ms, p[i], d1 / h, d2 / (h * h)};
  }
  return out;
}

Eigen::VectorXd augment(const MotionSample& s, int degree) {
  check_degree(degree);
  Eigen::VectorXd x(9 * degree);
  for (int axis = 0; axis < 3; ++axis) {
    const double base[3] = {s.pos(axis), s.vel(axis), s.acc(axis)};
    double pw[3] = {1.0, 1.0, 1.0};
    for (int k = 0; k < degree; ++k) {
      for (int c = 0; c < 3; ++c) {
        pw[c] *= base[c];
        x(axis * 3 * degree + 3 * k + c) = pw[c];
      }
    }
  }
  return x;
}

Eigen::MatrixXd ImpedanceMatrix::assembled() const {
  const int p = 3 * degree;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, 3 * p);
  for (int axis = 0; axis < 3 && degree > 0; ++axis) {
    m.block(axis, axis * p, 1, p) = rows[static_cast<std::size_t>(axis)].transpose();
  }
  return m;
}

Vec3 ImpedanceMatrix::apply(const Eigen::VectorXd& state) const {
  if (state.size() != 9 * degree) {
    throw DataError("augmented state of length " + std::to_string(state.size()) + " does not match model degree " +
                    std::to_string(degree));
  }
  const Eigen::Index p = 3 * degree;
  Vec3 f;
  for (int axis = 0; axis < 3; ++axis) {
    f(axis) = state.segment(axis * p, p).dot(rows[static_cast<std::size_t>(axis)]);
  }
  return f;
}

RollingWindow::RollingWindow(double duration_ms, double rate_hz)
    : capacity_(static_cast<std::size_t>(std::floor(duration_ms * rate_hz / 1000.0 + 1e-9))) {
  if (capacity_ == 0) {
    throw DataError("rolling window holds no samples at this duration and rate");
  }
}

void RollingWindow::push(const MotionSample& motion, const Vec3& force) {
  motion_.push_back(motion);
  force_.push_back(force);
  if (motion_.size() > capacity_) {
    motion_.pop_front();
    force_.pop_front();
  }
}

void RollingWindow::clear() {
  motion_.clear();
  force_.clear();
}

std::shared_ptr<const WindowSnapshot> RollingWindow::snapshot() const {
  auto s = std::make_shared<WindowSnapshot>();
  s->motion.assign(motion_.begin(), motion_.end());
  s->force.assign(force_.begin(), force_.end());
  return s;
}

Eigen::MatrixXd axis_regressors(const WindowSnapshot& window, int axis, int degree) {
  check_degree(degree);
  const auto n = static_cast<Eigen::Index>(window.size());
  Eigen::MatrixXd a(n, 3 * degree);
  for (Eigen::Index i = 0; i < n; ++i) {
    const MotionSample& s = window.motion[static_cast<std::size_t>(i)];
    const double base[3] = {s.pos(axis), s.vel(axis), s.acc(axis)};
    double pw[3] = {1.0, 1.0, 1.0};
    for (int k = 0; k < degree; ++k) {
      for (int c = 0; c < 3; ++c) {
        pw[c] *= base[c];
        a(i, 3 * k + c) = pw[c];
      }
    }
  }
  return a;
}

ImpedanceMatrix identify(const WindowSnapshot& window, int degree, const IdentifyOptions& options) {
  check_degree(degree);
  if (window.force.size() != window.motion.size()) {
    throw DataError("window motion and force buffers differ in length");
  }
  const std::size_t n = window.size();
  check_rows(n, degree);
  return identify_from(make_solvers(all_regressors(window, degree), window, n, options), n, degree);
}

double reconstruction_mae(const ImpedanceMatrix& m, const WindowSnapshot& window) {
  if (!m.valid() || window.size() == 0) {
    throw DataError("reconstruction error needs a valid model and a non-empty window");
  }
  return reconstruction_mae_rows(m, all_regressors(window, m.degree), window, 0, window.size());
}

Selection select_degree(const WindowSnapshot& window, const SelectionOptions& options) {
  check_degree(options.min_degree);
  check_degree(options.max_degree);
  if (options.min_degree > options.max_degree) {
    throw DataError("degree range is empty");
  }
  const auto regs = all_regressors(window, options.max_degree);
  const std::size_t n = window.size();
  const std::size_t fit_rows =
      options.mode == DegreeSelection::kHoldout
          ? n - static_cast<std::size_t>(std::floor(options.holdout_fraction * static_cast<double>(n)))
          : n;

  if (n == 0) {
    throw InsufficientData("degree selection on an empty window");
  }
  const AxisSolvers full = make_solvers(regs, window, n, options.identify);
  std::optional<AxisSolvers> head;
  if (fit_rows != n && fit_rows > 0) {
    head.emplace(make_solvers(regs, window, fit_rows, options.identify));
  }

  struct Candidate {
    std::optional<ImpedanceMatrix> model;
    double score = -1.0;
    double condition = -1.0;
  };
  auto evaluate = [&](int degree) {
    Candidate c;
    try {
      ImpedanceMatrix scored = head ? identify_from(*head, fit_rows, degree) : identify_from(full, n, degree);
      if (head) {
        c.score = reconstruction_mae_rows(scored, regs, window, fit_rows, n);
        scored = identify_from(full, n, degree);
      } else {
        c.score = reconstruction_mae_rows(scored, regs, window, 0, n);
      }
      c.condition = scored.condition;
      c.model = std::move(scored);
    } catch (const PoorlyExcited& e) {
      c.condition = e.condition();
    } catch (const InsufficientData&) {
    }
    return c;
  };

  std::array<Candidate, kMaxDegree> candidates;
  if (options.parallel) {
    std::array<std::future<Candidate>, kMaxDegree> futures;
    for (int d = options.min_degree; d <= options.max_degree; ++d) {
      futures[static_cast<std::size_t>(d - 1)] = std::async(std::launch::async, evaluate, d);
    }
    for (int d = options.min_degree; d <= options.max_degree; ++d) {
      candidates[static_cast<std::size_t>(d - 1)] = futures[static_cast<std::size_t>(d - 1)].get();
    }
  } else {
    for (int d = options.min_degree; d <= options.max_degree; ++d) {
      candidates[static_cast<std::size_t>(d - 1)] = evaluate(d);
    }
  }

  Selection sel;
  sel.mae.fill(-1.0);
  sel.condition.fill(-1.0);
  double best = std::numeric_limits<double>::infinity();
  for (int d = options.min_degree; d <= options.max_degree; ++d) {
    const Candidate& c = candidates[static_cast<std::size_t>(d - 1)];
    sel.condition[static_cast<std::size_t>(d - 1)] = c.condition;
    if (!c.model) {
      continue;
    }
    sel.mae[static_cast<std::size_t>(d - 1)] = c.score;
    best = std::min(best, c.score);
  }
  if (!std::isfinite(best)) {
    double worst = 0.0;
    for (double c : sel.condition) {
      worst = std::max(worst, c);
    }
    throw PoorlyExcited("no candidate degree could be identified on this window", 0, 0, worst);
  }
  for (int d = options.min_degree; d <= options.max_degree; ++d) {
    const Candidate& c = candidates[static_cast<std::size_t>(d - 1)];
    if (c.model && c.score <= best + options.tie_tolerance) {
      sel.model = *c.model;
      sel.selected = d;
      break;
    }
  }
  return sel;
}

ImpedanceMatrix linear_ima_baseline(const WindowSnapshot& window, const IdentifyOptions& options) {
  return identify(window, 1, options);
}

RenderedForce render(const ImpedanceMatrix& m, const Eigen::VectorXd& state, const Vec3& tip_velocity,
                     double gate_mm_s) {
  RenderedForce out;
  if (tip_velocity.norm() < gate_mm_s) {
    out.gated = true;
    out.degree_used = m.degree;
    return out;
  }
  if (!m.valid()) {
    return out;
  }
  out.force = m.apply(state);
  out.degree_used = m.degree;
  return out;
}

RenderedForce render(const ImpedanceMatrix& m, const MotionSample& sample, double gate_mm_s) {
  if (!m.valid()) {
    return render(m, Eigen::VectorXd(), sample.vel, gate_mm_s);
  }
  return render(m, augment(sample, m.degree), sample.vel, gate_mm_s);
}

std::vector<TimedForce> dfr_baseline(std::span<const TimedForce> measured, double delay_ms) {
  std::vector<TimedForce> out(measured.begin(), measured.end());
  if (measured.size() < 2) {
    for (auto& s : out) {
      s.force.setZero();
    }
    return out;
  }
  const double step = (measured.back().t_ms - measured.front().t_ms) / static_cast<double>(measured.size() - 1);
  for (std::size_t i = 0; i + 1 < measured.size(); ++i) {
    const double dt = measured[i + 1].t_ms - measured[i].t_ms;
    if (std::abs(dt - step) > 0.05 * step) {
      throw DataError("direct force reflection needs a uniformly sampled stream");
    }
  }
  const auto lag = static_cast<std::size_t>(std::llround(delay_ms / step));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].force = i >= lag ? measured[i - lag].force : Vec3::Zero();
  }
  return out;
}

BackgroundIdentifier::BackgroundIdentifier(SelectionOptions options)
    : options_(options), worker_([this] { loop(); }) {}

BackgroundIdentifier::~BackgroundIdentifier() {
  stop_.store(true);
  wake_.notify_one();
  worker_.join();
}

void BackgroundIdentifier::submit(std::shared_ptr<const WindowSnapshot> window) {
  requests_.publish(std::move(window));
  pending_.store(true, std::memory_order_release);
  wake_.notify_one();
}

const ImpedanceMatrix& BackgroundIdentifier::latest() {
  models_.refresh();
  return models_.front();
}

void BackgroundIdentifier::loop() {
  while (!stop_.load()) {
    {
      std::unique_lock lock(wake_mutex_);
      wake_.wait_for(lock, std::chrono::milliseconds(1), [this] { return pending_.load() || stop_.load(); });
    }
    if (stop_.load()) {
      break;
    }
    if (!pending_.exchange(false, std::memory_order_acq_rel)) {
      continue;
    }
    requests_.refresh();
    const auto window = requests_.front();
    if (!window) {
      continue;
    }
    try {
      models_.publish(select_degree(*window, options_).model);
    } catch (const Error&) {
      // keep the previous model
    }
    completed_.fetch_add(1);
  }
}

EngineRun run_engine(const MotionStream& motion, std::span<const Vec3> measured, std::span<const Vec3> reference,
                     const EngineConfig& config) {
  if (measured.size() != motion.size() || reference.size() != motion.size()) {
    throw DataError("motion, measured and reference streams must have equal length");
  }
  RollingWindow window(config.window_ms, config.rate_hz);
  const auto cadence = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.identify_every_ms * config.rate_hz / 1000.0)));

  struct Published {
    double t_ms;
    ImpedanceMatrix nima;
    ImpedanceMatrix linear;
  };
  std::deque<Published> queue;
  ImpedanceMatrix nima_model, linear_model;

  EngineRun run;
  run.nima.reserve(motion.size());
  run.linear_ima.reserve(motion.size());
  for (std::size_t i = 0; i < motion.size(); ++i) {
    const MotionSample& s = motion[i];
    while (!queue.empty() && queue.front().t_ms + config.model_latency_ms <= s.t_ms + 1e-9) {
      if (queue.front().nima.valid()) {
        nima_model = std::move(queue.front().nima);
      }
      if (queue.front().linear.valid()) {
        linear_model = std::move(queue.front().linear);
      }
      queue.pop_front();
    }

    const RenderedForce fn = render(nima_model, s, config.gate_mm_s);
    const RenderedForce fl = render(linear_model, s, config.gate_mm_s);
    run.nima.push_back({s.t_ms, fn.force, reference[i], fn.degree_used, fn.gated});
    run.linear_ima.push_back({s.t_ms, fl.force, reference[i], fl.degree_used, fl.gated});

    window.push(s, measured[i]);
    if (!window.full() || (i + 1) % cadence != 0) {
      continue;
    }
    const auto snap = window.snapshot();
    WindowRecord rec;
    rec.t_ms = s.t_ms;
    Published pub{s.t_ms, {}, {}};
    try {
      Selection sel = select_degree(*snap, config.selection);
      rec.selected = sel.selected;
      rec.mae = sel.mae;
      rec.condition = sel.model.condition;
      pub.nima = std::move(sel.model);
    } catch (const PoorlyExcited& e) {
      rec.mae.fill(-1.0);
      rec.condition = e.condition();
      ++run.poorly_excited_windows;
    }
    try {
      pub.linear = linear_ima_baseline(*snap, config.selection.identify);
    } catch (const SingularSystem&) {
    }
    run.windows.push_back(rec);
    queue.push_back(std::move(pub));
  }
  return run;
}

namespace {
const std::vector<std::string> kRenderHeader{"t_ms",     "fd_x",     "fd_y",     "fd_z", "f_true_x",
                                             "f_true_y", "f_true_z", "N_used",   "gated"};
}

void write_render_log(const std::string& path, const std::vector<RenderRecord>& log) {
  CsvWriter w(path, kRenderHeader);
  for (const auto& r : log) {
    w.row({r.t_ms, r.rendered.x(), r.rendered.y(), r.rendered.z(), r.reference.x(), r.reference.y(),
           r.reference.z(), static_cast<double>(r.degree_used), r.gated ? 1.0 : 0.0});
  }
  w.close();
}

std::vector<RenderRecord> read_render_log(const std::string& path) {
  const CsvTable t = read_csv(path, kRenderHeader);
  std::vector<RenderRecord> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    out.push_back({r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6]), static_cast<int>(r[7]), r[8] != 0.0});
  }
  return out;
}

void write_window_log(const std::string& path, const std::vector<WindowRecord>& log) {
  CsvWriter w(path, {"t_ms", "N_selected", "mae_1", "mae_2", "mae_3", "mae_4", "mae_5", "cond"});
  for (const auto& r : log) {
    w.row({r.t_ms, static_cast<double>(r.selected), r.mae[0], r.mae[1], r.mae[2], r.mae[3], r.mae[4],
           std::isfinite(r.condition) ? r.condition : -1.0});
  }
  w.close();
}

}  // namespace nima::impedance
