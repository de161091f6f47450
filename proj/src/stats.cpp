#include "nima/stats.hpp"

#include <algorithm>
#include <cmath>

#include "nima/error.hpp"

namespace nima {

double mean(std::span<const double> values) {
  if (values.empty()) {
    return 0.0;
  }
  double s = 0.0;
  for (double v : values) {
    s += v;
  }
  return s / static_cast<double>(values.size());
}

double stddev(std::span<const double> values) {
  if (values.size() < 2) {
    return 0.0;
  }
  const double m = mean(values);
  double s = 0.0;
  for (double v : values) {
    s += (v - m) * (v - m);
  }
  return std::sqrt(s / static_cast<double>(values.size() - 1));
}

double regression_r2(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) {
    throw InsufficientData("regression_r2: streams empty or of different length");
  }
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (syy == 0.0) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst = std::max(worst, std::abs(x[i] - y[i]));
    }
    return worst == 0.0 ? 1.0 : 0.0;
  }
  if (sxx == 0.0) {
    return 0.0;
  }
  return std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
}

AxisReport compare_streams(std::span<const Vec3> estimate, std::span<const Vec3> reference) {
  if (estimate.size() != reference.size() || estimate.empty()) {
    throw InsufficientData("compare_streams: streams empty or of different length");
  }
  AxisReport r;
  r.count = estimate.size();
  std::vector<double> err(estimate.size()), est(estimate.size()), ref(estimate.size());
  for (int axis = 0; axis < 3; ++axis) {
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
      est[i] = estimate[i](axis);
      ref[i] = reference[i](axis);
      err[i] = est[i] - ref[i];
      abs_sum += std::abs(err[i]);
    }
    r.mae(axis) = abs_sum / static_cast<double>(estimate.size());
    r.sd(axis) = stddev(err);
    r.bias(axis) = mean(err);
    r.r2(axis) = regression_r2(est, ref);
  }
  return r;
}

Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
  if (!(hi > lo) || bins == 0) {
    throw DataError("histogram needs hi > lo and at least one bin");
  }
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    if (!std::isfinite(v)) {
      continue;
    }
    auto idx = static_cast<long>(std::floor((v - lo) / width));
    idx = std::clamp(idx, 0L, static_cast<long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(idx)];
  }
  return h;
}

}  // namespace nima
