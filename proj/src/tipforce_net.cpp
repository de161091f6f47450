#include "nima/tipforce_net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "nima/csv.hpp"
#include "nima/error.hpp"
#include "nima/stats.hpp"

namespace nima::tipforce {

namespace {

constexpr const char* kMagic = "NIMA-MLP-1";
constexpr double kDivergenceLoss = 1e6;

const std::vector<std::string> kDatasetHeader{"f1x", "f1y", "f1z", "qw", "qx", "qy", "qz", "f3x", "f3y", "f3z"};

Eigen::VectorXd raw_features(const Vec3& f1, const Quaternion& q) {
  Eigen::VectorXd x(kInputs);
  x << f1.x(), f1.y(), f1.z(), q.w, q.x, q.y, q.z;
  return x;
}

void check_finite(const Sample& s, std::size_t row) {
  if (!s.f1.allFinite() || !s.f3.allFinite() || !std::isfinite(s.q.w) || !std::isfinite(s.q.x) ||
      !std::isfinite(s.q.y) || !std::isfinite(s.q.z)) {
    throw DataError("tip-force dataset row " + std::to_string(row) + " has non-finite values");
  }
  if (std::abs(s.q.norm() - 1.0) > 1e-6) {
    throw DataError("tip-force dataset row " + std::to_string(row) + " quaternion is not unit norm");
  }
}

struct Matrices {
  Eigen::MatrixXd x;  // kInputs x n
  Eigen::MatrixXd y;  // kOutputs x n
};

Matrices to_matrices(const Dataset& data, std::size_t begin, std::size_t end, bool with_negated_q) {
  const std::size_t n = end - begin;
  const std::size_t total = with_negated_q ? 2 * n : n;
  Matrices m{Eigen::MatrixXd(kInputs, total), Eigen::MatrixXd(kOutputs, total)};
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = data[begin + i];
    const auto c = static_cast<Eigen::Index>(i);
    m.x.col(c) = raw_features(s.f1, s.q);
    m.y.col(c) = s.f3;
    if (with_negated_q) {
      const auto c2 = static_cast<Eigen::Index>(n + i);
      m.x.col(c2) = raw_features(s.f1, -s.q);
      m.y.col(c2) = s.f3;
    }
  }
  return m;
}

void fit_normalization(const Eigen::MatrixXd& raw, Eigen::VectorXd& mean, Eigen::VectorXd& scale) {
  mean = raw.rowwise().mean();
  scale.resize(raw.rows());
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    const double var = (raw.row(r).array() - mean(r)).square().mean();
    const double sd = std::sqrt(var);
    scale(r) = sd > 1e-12 ? sd : 1.0;
  }
}

Eigen::MatrixXd apply_norm(const Eigen::MatrixXd& raw, const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
  return (raw.colwise() - mean).array().colwise() / scale.array();
}

Vec3 axis_mae(const Mlp& m, const Matrices& raw) {
  const Eigen::MatrixXd xn = apply_norm(raw.x, m.input_mean, m.input_scale);
  const Eigen::MatrixXd pred =
      (m.forward(xn).array().colwise() * m.output_scale.array()).colwise() + m.output_mean.array();
  return (pred - raw.y).cwiseAbs().rowwise().mean();
}

}  // namespace

Mlp::Mlp(const std::vector<int>& layer_sizes, std::uint64_t seed) : sizes_(layer_sizes) {
  if (sizes_.size() < 2 || sizes_.front() != static_cast<int>(kInputs) || sizes_.back() != static_cast<int>(kOutputs)) {
    throw DataError("network must map 7 inputs to 3 outputs");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    Layer layer;
    const int in = sizes_[l], out = sizes_[l + 1];
    layer.weight = Eigen::MatrixXd::Zero(out, in);
    layer.bias = Eigen::VectorXd::Zero(out);
    if (l + 2 < sizes_.size()) {
      const double s = 1.0 / std::sqrt(static_cast<double>(in));
      for (int i = 0; i < out; ++i) {
        for (int j = 0; j < in; ++j) {
          layer.weight(i, j) = s * gauss(rng);
        }
      }
    }
    // Output layer starts at zero so an all-constant target is reproduced exactly.
    layers_.push_back(std::move(layer));
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    a = (l + 1 < layers_.size()) ? Eigen::MatrixXd(z.array().tanh()) : z;
  }
  return a;
}

Eigen::VectorXd Mlp::normalize_input(const Vec3& f1, const Quaternion& q) const {
  return (raw_features(f1, q) - input_mean).cwiseQuotient(input_scale);
}

Vec3 Mlp::predict(const Vec3& f1, const Quaternion& q) const {
  if (!f1.allFinite() || !std::isfinite(q.w) || !std::isfinite(q.x) || !std::isfinite(q.y) || !std::isfinite(q.z)) {
    throw DataError("tip-force prediction: non-finite input");
  }
  const Eigen::VectorXd y = forward(normalize_input(f1, q));
  return y.cwiseProduct(output_scale) + output_mean;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  }
  return n;
}

Eigen::VectorXd Mlp::parameters() const {
  Eigen::VectorXd p(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : layers_) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
        p(k++) = l.weight(i, j);
      }
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      p(k++) = l.bias(i);
    }
  }
  return p;
}

void Mlp::set_parameters(const Eigen::VectorXd& p) {
  if (static_cast<std::size_t>(p.size()) != parameter_count()) {
    throw DataError("parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
        l.weight(i, j) = p(k++);
      }
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      l.bias(i) = p(k++);
    }
  }
}

double Mlp::loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const {
  return 0.5 * (forward(x) - y).squaredNorm() / static_cast<double>(x.cols());
}

Eigen::VectorXd Mlp::gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const {
  const std::size_t depth = layers_.size();
  std::vector<Eigen::MatrixXd> acts(depth + 1);
  acts[0] = x;
  for (std::size_t l = 0; l < depth; ++l) {
    Eigen::MatrixXd z = layers_[l].weight * acts[l];
    z.colwise() += layers_[l].bias;
    acts[l + 1] = (l + 1 < depth) ? Eigen::MatrixXd(z.array().tanh()) : z;
  }

  std::vector<Eigen::MatrixXd> dw(depth);
  std::vector<Eigen::VectorXd> db(depth);
  Eigen::MatrixXd delta = (acts[depth] - y) / static_cast<double>(x.cols());
  for (std::size_t l = depth; l-- > 0;) {
    dw[l] = delta * acts[l].transpose();
    db[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (layers_[l].weight.transpose() * delta).array() * (1.0 - acts[l].array().square());
    }
  }

  Eigen::VectorXd g(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < depth; ++l) {
    for (Eigen::Index i = 0; i < dw[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < dw[l].cols(); ++j) {
        g(k++) = dw[l](i, j);
      }
    }
    for (Eigen::Index i = 0; i < db[l].size(); ++i) {
      g(k++) = db[l](i);
    }
  }
  return g;
}

TrainResult train(const Dataset& data, const TrainConfig& config) {
  if (data.size() < kMinTrainingRows) {
    throw InsufficientData("tip-force training needs at least " + std::to_string(kMinTrainingRows) + " rows, got " +
                           std::to_string(data.size()));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_finite(data[i], i);
  }
  if (!(config.train_fraction > 0.0) || !(config.validation_fraction > 0.0) ||
      config.train_fraction + config.validation_fraction >= 1.0) {
    throw DataError("train/validation fractions must be positive and leave a test block");
  }

  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(n)));
  const Matrices train_raw = to_matrices(data, 0, n_train, config.augment_quaternion_sign);
  const Matrices val_raw = to_matrices(data, n_train, n_train + n_val, false);
  const Matrices test_raw = to_matrices(data, n_train + n_val, n, false);

  std::vector<int> sizes{static_cast<int>(kInputs)};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(static_cast<int>(kOutputs));

  TrainResult result{Mlp(sizes, config.seed), {}};
  Mlp& model = result.model;
  fit_normalization(train_raw.x, model.input_mean, model.input_scale);
  fit_normalization(train_raw.y, model.output_mean, model.output_scale);
  const Eigen::MatrixXd xn = apply_norm(train_raw.x, model.input_mean, model.input_scale);
  const Eigen::MatrixXd yn = apply_norm(train_raw.y, model.output_mean, model.output_scale);

  TrainReport& rep = result.report;
  rep.train_rows = static_cast<std::size_t>(train_raw.x.cols());
  rep.validation_rows = n_val;
  rep.test_rows = n - n_train - n_val;

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto cols = static_cast<std::size_t>(xn.cols());
  std::vector<Eigen::Index> order(cols);
  std::iota(order.begin(), order.end(), 0);

  Eigen::VectorXd params = model.parameters();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd best_params = params;
  double best_val = std::numeric_limits<double>::infinity();
  double step = config.learning_rate;
  double current_loss = model.loss(xn, yn);
  int since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (config.optimizer == Optimizer::kFullBatchLineSearch) {
      const Eigen::VectorXd g = model.gradient(xn, yn);
      bool improved = false;
      for (int halving = 0; halving < 40; ++halving) {
        model.set_parameters(params - step * g);
        const double trial = model.loss(xn, yn);
        if (std::isfinite(trial) && trial <= current_loss) {
          params = model.parameters();
          current_loss = trial;
          improved = true;
          step *= 1.5;
          break;
        }
        step *= 0.5;
      }
      if (!improved) {
        model.set_parameters(params);
      }
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      const std::size_t bs = config.batch_size > 0 ? static_cast<std::size_t>(config.batch_size) : cols;
      Eigen::MatrixXd bx, by;
      for (std::size_t start = 0; start < cols; start += bs) {
        const std::size_t len = std::min(bs, cols - start);
        bx.resize(xn.rows(), static_cast<Eigen::Index>(len));
        by.resize(yn.rows(), static_cast<Eigen::Index>(len));
        for (std::size_t i = 0; i < len; ++i) {
          bx.col(static_cast<Eigen::Index>(i)) = xn.col(order[start + i]);
          by.col(static_cast<Eigen::Index>(i)) = yn.col(order[start + i]);
        }
        const Eigen::VectorXd g = model.gradient(bx, by);
        velocity = config.momentum * velocity - config.learning_rate * g;
        params += velocity;
        model.set_parameters(params);
      }
      current_loss = model.loss(xn, yn);
    }

    if (!std::isfinite(current_loss) || current_loss > kDivergenceLoss) {
      throw TrainingFailure("tip-force training diverged at epoch " + std::to_string(epoch) +
                            " (loss " + std::to_string(current_loss) + ")");
    }
    rep.train_loss.push_back(current_loss);
    const double val = axis_mae(model, val_raw).mean();
    rep.validation_mae.push_back(val);
    if (val < best_val - 1e-9) {
      best_val = val;
      best_params = params;
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  model.set_parameters(best_params);
  if (rep.test_rows > 0) {
    const Eigen::MatrixXd xt = apply_norm(test_raw.x, model.input_mean, model.input_scale);
    const Eigen::MatrixXd pred =
        (model.forward(xt).array().colwise() * model.output_scale.array()).colwise() + model.output_mean.array();
    const Eigen::MatrixXd err = pred - test_raw.y;
    for (int a = 0; a < 3; ++a) {
      std::vector<double> e(static_cast<std::size_t>(err.cols()));
      for (Eigen::Index i = 0; i < err.cols(); ++i) {
        e[static_cast<std::size_t>(i)] = err(a, i);
      }
      rep.test_sd(a) = stddev(e);
      rep.test_mae(a) = err.row(a).cwiseAbs().mean();
    }
  }
  return result;
}

std::vector<Vec3> prediction_errors(const Mlp& model, const Dataset& data) {
  std::vector<Vec3> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    out.push_back(model.predict(s.f1, s.q) - s.f3);
  }
  return out;
}

FrictionDiagnostics residual_friction(const Mlp& model, const Vec3& f1, const Quaternion& q, const Vec3& f3_true) {
  const Vec3 f3 = model.predict(f1, q);
  return {-(f1 + f3), f3 - f3_true};
}

void Mlp::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  auto vec = [&](const char* name, const Eigen::VectorXd& v) {
    out << name;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      out << ' ' << format_number(v(i));
    }
    out << '\n';
  };
  out << kMagic << '\n';
  out << "sizes";
  for (int s : sizes_) {
    out << ' ' << s;
  }
  out << '\n';
  vec("input_mean", input_mean);
  vec("input_scale", input_scale);
  vec("output_mean", output_mean);
  vec("output_scale", output_scale);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& w = layers_[l].weight;
    out << "weight " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        out << (j ? " " : "") << format_number(w(i, j));
      }
      out << '\n';
    }
    vec(("bias " + std::to_string(l)).c_str(), layers_[l].bias);
  }
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

Mlp Mlp::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  auto fail = [&](const std::string& why) { return DataError(path.string() + ": " + why); };
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) {
    throw fail("not a tip-force model (missing NIMA-MLP-1 header)");
  }

  auto read_line = [&](const std::string& key) {
    std::string line;
    if (!std::getline(in, line)) {
      throw fail("truncated at '" + key + "'");
    }
    std::istringstream ss(line);
    std::string got;
    ss >> got;
    if (got != key) {
      throw fail("expected '" + key + "', got '" + got + "'");
    }
    std::vector<double> values;
    std::string tok;
    while (ss >> tok) {
      values.push_back(std::stod(tok));
    }
    return values;
  };
  auto to_vec = [&](const std::vector<double>& v, std::size_t n, const std::string& key) {
    if (v.size() != n) {
      throw fail("'" + key + "' has wrong length");
    }
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(n)));
  };

  Mlp m;
  for (double s : read_line("sizes")) {
    m.sizes_.push_back(static_cast<int>(s));
  }
  if (m.sizes_.size() < 2 || m.sizes_.front() != static_cast<int>(kInputs) ||
      m.sizes_.back() != static_cast<int>(kOutputs)) {
    throw fail("layer sizes must start at 7 and end at 3");
  }
  m.input_mean = to_vec(read_line("input_mean"), kInputs, "input_mean");
  m.input_scale = to_vec(read_line("input_scale"), kInputs, "input_scale");
  m.output_mean = to_vec(read_line("output_mean"), kOutputs, "output_mean");
  m.output_scale = to_vec(read_line("output_scale"), kOutputs, "output_scale");
  if ((m.input_scale.array() <= 0.0).any() || (m.output_scale.array() <= 0.0).any()) {
    throw fail("normalization scales must be positive");
  }
  for (std::size_t l = 0; l + 1 < m.sizes_.size(); ++l) {
    std::string line;
    std::getline(in, line);
    std::istringstream head(line);
    std::string key;
    std::size_t idx = 0;
    Eigen::Index rows = 0, cols = 0;
    head >> key >> idx >> rows >> cols;
    if (key != "weight" || idx != l || rows != m.sizes_[l + 1] || cols != m.sizes_[l]) {
      throw fail("bad weight header for layer " + std::to_string(l));
    }
    Layer layer;
    layer.weight.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        std::string tok;
        if (!(in >> tok)) {
          throw fail("truncated weights");
        }
        layer.weight(i, j) = std::stod(tok);
      }
    }
    in >> std::ws;
    const auto b = read_line("bias");
    if (b.size() != static_cast<std::size_t>(rows) + 1 || b.front() != static_cast<double>(l)) {
      throw fail("bad bias line for layer " + std::to_string(l));
    }
    layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data() + 1, rows);
    m.layers_.push_back(std::move(layer));
  }
  return m;
}

Dataset read_dataset(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, kDatasetHeader);
  Dataset d;
  d.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    d.push_back({Vec3(r[0], r[1], r[2]), Quaternion{r[3], r[4], r[5], r[6]}, Vec3(r[7], r[8], r[9])});
  }
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  CsvWriter w(path, kDatasetHeader);
  for (const auto& s : data) {
    w.row({s.f1.x(), s.f1.y(), s.f1.z(), s.q.w, s.q.x, s.q.y, s.q.z, s.f3.x(), s.f3.y(), s.f3.z()});
  }
  w.close();
}

}  // namespace nima::tipforce
