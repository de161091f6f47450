#pragma once

#include <Eigen/Core>

namespace nima {

struct LeastSquaresOptions {
  /// Singular values below relative_cutoff * sigma_max are discarded.
  double relative_cutoff = 1e-10;
  /// Scale columns to unit norm before the decomposition. The least-squares
  /// solution is unchanged for full column rank; the cutoff then acts on the
  /// scaled problem, which keeps mixed-unit regressors comparable.
  bool equilibrate = false;
};

struct LeastSquaresResult {
  Eigen::MatrixXd solution;          // cols(A) x cols(B)
  int rank = 0;
  int columns = 0;
  double largest_singular = 0.0;
  double smallest_retained = 0.0;    // 0 when rank == 0
  double condition = 0.0;            // largest / smallest retained, inf when rank == 0

  bool full_rank() const { return rank == columns; }
};

/// Minimum-norm least-squares solution of A X = B through a truncated SVD.
LeastSquaresResult solve_least_squares(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                       const LeastSquaresOptions& options = {});

/// Moore-Penrose pseudo-inverse (cols x rows) with a relative singular-value cutoff.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& a, double relative_cutoff = 1e-10);

}  // namespace nima
