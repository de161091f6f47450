#include "nima/linalg.hpp"

#include <limits>

#include <Eigen/SVD>

#include "nima/error.hpp"

namespace nima {

LeastSquaresResult solve_least_squares(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                       const LeastSquaresOptions& options) {
  if (a.rows() != b.rows()) {
    throw DataError("least squares: row mismatch between design matrix and targets");
  }
  if (!a.allFinite() || !b.allFinite()) {
    throw DataError("least squares: non-finite entries");
  }

  LeastSquaresResult out;
  out.columns = static_cast<int>(a.cols());
  out.solution = Eigen::MatrixXd::Zero(a.cols(), b.cols());
  out.condition = std::numeric_limits<double>::infinity();
  if (a.rows() == 0 || a.cols() == 0) {
    return out;
  }

  Eigen::VectorXd scale = Eigen::VectorXd::Ones(a.cols());
  if (options.equilibrate) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double n = a.col(j).norm();
      if (n > 0.0) {
        scale(j) = 1.0 / n;
      }
    }
  }
  const Eigen::MatrixXd scaled = a * scale.asDiagonal();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  out.largest_singular = s.size() > 0 ? s(0) : 0.0;
  const double threshold = options.relative_cutoff * out.largest_singular;

  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > threshold && s(i) > 0.0) {
      ++rank;
    }
  }
  out.rank = rank;
  if (rank == 0) {
    return out;
  }
  out.smallest_retained = s(rank - 1);
  out.condition = out.largest_singular / out.smallest_retained;

  const auto u = svd.matrixU().leftCols(rank);
  const auto v = svd.matrixV().leftCols(rank);
  const Eigen::VectorXd inv = s.head(rank).cwiseInverse();
  out.solution = scale.asDiagonal() * (v * (inv.asDiagonal() * (u.transpose() * b)));
  return out;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& a, double relative_cutoff) {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(a.rows(), a.rows());
  return solve_least_squares(a, eye, {relative_cutoff, false}).solution;
}

}  // namespace nima
