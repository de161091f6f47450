#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "nima/error.hpp"
#include "nima/geometry.hpp"

namespace nima::impedance {

inline constexpr int kMinDegree = 1;
inline constexpr int kMaxDegree = 5;

/// Identification failed because the window does not excite every regressor.
class PoorlyExcited : public SingularSystem {
public:
  PoorlyExcited(const std::string& what, int degree, int rank, double condition)
      : SingularSystem(what, rank, condition), degree_(degree) {}
  int degree() const { return degree_; }

private:
  int degree_;
};

/// Position (mm), velocity (mm/s) and acceleration (mm/s^2) of the tool at one instant.
struct MotionSample {
  double t_ms = 0.0;
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  Vec3 acc = Vec3::Zero();
};

using MotionStream = std::vector<MotionSample>;

struct TimedPosition {
  double t_ms = 0.0;
  Vec3 pos = Vec3::Zero();
};

struct DifferentiationOptions {
  int smoothing_passes = 0;   // moving-average passes applied to positions first
  int smoothing_window = 5;   // samples, odd
  double max_jitter = 0.05;   // relative deviation of any step from the median step
};

/// Velocity and acceleration by finite differences: five-point central stencils
/// inside, five-point one-sided stencils at the two samples nearest each end.
/// Throws InsufficientData (< 5 samples) or DataError (irregular sampling).
MotionStream differentiate_stream(std::span<const TimedPosition> positions, const DifferentiationOptions& options = {});

/// Per-axis blocks (u, du, ddu, u^2, du^2, ddu^2, ..., u^N, du^N, ddu^N) stacked
/// x, y, z; length 9N. Throws DataError for N outside [1, 5].
Eigen::VectorXd augment(const MotionSample& sample, int degree);

/// Identified impedance: force_i = m_i . (axis-i block of the augmented state).
struct ImpedanceMatrix {
  int degree = 0;  // 0 means "no model"
  std::array<Eigen::VectorXd, 3> rows;
  double smallest_retained = 0.0;  // smallest retained singular value over the axes
  double condition = 0.0;          // worst axis condition number (equilibrated regressors)
  std::size_t samples = 0;

  bool valid() const { return degree > 0; }
  /// 3 x 9N block-diagonal matrix.
  Eigen::MatrixXd assembled() const;
  /// M * X for an augmented state of the same degree; throws DataError on mismatch.
  Vec3 apply(const Eigen::VectorXd& state) const;
};

/// Immutable copy of a window's contents, shared with identification.
struct WindowSnapshot {
  std::vector<MotionSample> motion;
  std::vector<Vec3> force;

  std::size_t size() const { return motion.size(); }
  double t_end_ms() const { return motion.empty() ? 0.0 : motion.back().t_ms; }
};

/// Fixed-length FIFO of aligned motion and isolated tip-force samples.
class RollingWindow {
public:
  RollingWindow(double duration_ms, double rate_hz);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return motion_.size(); }
  bool full() const { return motion_.size() == capacity_; }

  void push(const MotionSample& motion, const Vec3& force);
  void clear();
  std::shared_ptr<const WindowSnapshot> snapshot() const;

private:
  std::size_t capacity_;
  std::deque<MotionSample> motion_;
  std::deque<Vec3> force_;
};

struct IdentifyOptions {
  double relative_cutoff = 1e-8;
};

/// n x 3N regressor matrix of one axis.
Eigen::MatrixXd axis_regressors(const WindowSnapshot& window, int axis, int degree);

/// Three decoupled per-axis least-squares fits through an SVD pseudo-inverse.
/// Throws InsufficientData (n < 3N + 5) or PoorlyExcited (any axis rank < 3N).
ImpedanceMatrix identify(const WindowSnapshot& window, int degree, const IdentifyOptions& options = {});

/// Mean absolute in-window reconstruction error over samples and axes, N.
double reconstruction_mae(const ImpedanceMatrix& m, const WindowSnapshot& window);

enum class DegreeSelection { kInSample, kHoldout };

struct SelectionOptions {
  int min_degree = kMinDegree;
  int max_degree = kMaxDegree;
  DegreeSelection mode = DegreeSelection::kInSample;
  double holdout_fraction = 0.2;  // trailing part of the window used for scoring
  double tie_tolerance = 1e-9;    // N; a higher degree must beat a lower one by more than this
  bool parallel = false;
  IdentifyOptions identify;
};

struct Selection {
  ImpedanceMatrix model;
  std::array<double, kMaxDegree> mae{};     // per degree, -1 when not identified
  std::array<double, kMaxDegree> condition{};
  int selected = 0;
};

/// Fits every candidate degree and keeps the one with the lowest reconstruction
/// error, smallest degree on ties. Throws PoorlyExcited when no degree fits.
Selection select_degree(const WindowSnapshot& window, const SelectionOptions& options = {});

/// Linear impedance matching baseline: identify() with N = 1.
ImpedanceMatrix linear_ima_baseline(const WindowSnapshot& window, const IdentifyOptions& options = {});

struct RenderedForce {
  Vec3 force = Vec3::Zero();
  int degree_used = 0;
  bool gated = false;
};

inline constexpr double kDefaultGateMmPerS = 1.0;

/// Zero force, exactly, when |tip_velocity| < gate; otherwise M X. An invalid
/// model renders zero without gating.
RenderedForce render(const ImpedanceMatrix& m, const Eigen::VectorXd& state, const Vec3& tip_velocity,
                     double gate_mm_s = kDefaultGateMmPerS);
RenderedForce render(const ImpedanceMatrix& m, const MotionSample& sample, double gate_mm_s = kDefaultGateMmPerS);

struct TimedForce {
  double t_ms = 0.0;
  Vec3 force = Vec3::Zero();
};

/// Direct force reflection: the stream delayed by delay_ms, zero before the first
/// delayed sample arrives. Throws DataError on non-uniform sampling.
std::vector<TimedForce> dfr_baseline(std::span<const TimedForce> measured, double delay_ms);

/// Single-writer single-reader triple buffer. publish() and refresh() never block.
template <class T>
class TripleBuffer {
public:
  explicit TripleBuffer(const T& initial = T{}) : slots_{initial, initial, initial} {}

  /// Writer side.
  void publish(T value) {
    slots_[back_] = std::move(value);
    back_ = middle_.exchange(back_ | kDirty, std::memory_order_acq_rel) & kIndex;
  }

  /// Reader side; returns true when a newer value became visible.
  bool refresh() {
    if ((middle_.load(std::memory_order_acquire) & kDirty) == 0) {
      return false;
    }
    front_ = middle_.exchange(front_, std::memory_order_acq_rel) & kIndex;
    return true;
  }

  const T& front() const { return slots_[front_]; }

private:
  static constexpr unsigned kIndex = 3u;
  static constexpr unsigned kDirty = 4u;
  std::array<T, 3> slots_;
  std::atomic<unsigned> middle_{1};
  unsigned back_ = 0;
  unsigned front_ = 2;
};

/// Runs select_degree on a worker thread. The rendering thread submits window
/// snapshots and reads the latest model without ever waiting on the worker.
class BackgroundIdentifier {
public:
  explicit BackgroundIdentifier(SelectionOptions options);
  ~BackgroundIdentifier();
  BackgroundIdentifier(const BackgroundIdentifier&) = delete;
  BackgroundIdentifier& operator=(const BackgroundIdentifier&) = delete;

  void submit(std::shared_ptr<const WindowSnapshot> window);
  /// Latest published model (invalid until the first successful identification).
  const ImpedanceMatrix& latest();
  std::size_t completed() const { return completed_.load(); }

private:
  void loop();

  SelectionOptions options_;
  TripleBuffer<std::shared_ptr<const WindowSnapshot>> requests_;
  TripleBuffer<ImpedanceMatrix> models_;
  std::atomic<bool> pending_{false};
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> completed_{0};
  std::mutex wake_mutex_;
  std::condition_variable wake_;
  std::thread worker_;
};

/// Configuration of a full rendering run over aligned streams.
struct EngineConfig {
  double window_ms = 300.0;
  double rate_hz = 1000.0;
  double gate_mm_s = kDefaultGateMmPerS;
  double identify_every_ms = 10.0;
  double model_latency_ms = 0.0;  // extra age imposed on a model before it may be rendered
  SelectionOptions selection;
};

struct RenderRecord {
  double t_ms = 0.0;
  Vec3 rendered = Vec3::Zero();
  Vec3 reference = Vec3::Zero();
  int degree_used = 0;
  bool gated = false;
};

struct WindowRecord {
  double t_ms = 0.0;
  int selected = 0;  // 0 when every degree was poorly excited
  std::array<double, kMaxDegree> mae{};
  double condition = -1.0;
};

struct EngineRun {
  std::vector<RenderRecord> nima;
  std::vector<RenderRecord> linear_ima;
  std::vector<WindowRecord> windows;
  std::size_t poorly_excited_windows = 0;
};

/// Deterministic, single-threaded replay: at each sample the latest models are
/// rendered first, then the sample enters the window and, on the identification
/// cadence, the models are refreshed. measured feeds identification; reference
/// is only copied into the log.
EngineRun run_engine(const MotionStream& motion, std::span<const Vec3> measured, std::span<const Vec3> reference,
                     const EngineConfig& config);

// t_ms,fd_x,fd_y,fd_z,f_true_x,f_true_y,f_true_z,N_used,gated
void write_render_log(const std::string& path, const std::vector<RenderRecord>& log);
std::vector<RenderRecord> read_render_log(const std::string& path);
// t_ms,N_selected,mae_1..mae_5,cond  (-1 marks a degree that could not be identified)
void write_window_log(const std::string& path, const std::vector<WindowRecord>& log);

}  // namespace nima::impedance
