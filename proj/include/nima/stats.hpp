#pragma once

#include <span>
#include <vector>

#include "nima/geometry.hpp"

namespace nima {

/// Per-axis agreement between an estimate and a reference force stream.
struct AxisReport {
  Vec3 mae = Vec3::Zero();   // mean |estimate - reference|
  Vec3 sd = Vec3::Zero();    // sample SD of the signed error
  Vec3 r2 = Vec3::Ones();    // R^2 of the linear regression reference ~ estimate
  Vec3 bias = Vec3::Zero();  // mean signed error
  std::size_t count = 0;

  double mean_mae() const { return mae.mean(); }
};

/// Throws InsufficientData when the streams are empty or differ in length.
AxisReport compare_streams(std::span<const Vec3> estimate, std::span<const Vec3> reference);

double mean(std::span<const double> values);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(std::span<const double> values);
/// Coefficient of determination of the least-squares line y ~ a + b x.
/// Constant y gives 1 when it is reproduced exactly and 0 otherwise.
double regression_r2(std::span<const double> x, std::span<const double> y);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;  // values outside [lo, hi) are clamped into the end bins

  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / counts.size(); }
};

Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

}  // namespace nima
