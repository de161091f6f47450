#include <doctest.h>

#include <cmath>

#include "nima/linalg.hpp"
#include "oracles.hpp"

using namespace nima;

TEST_CASE("oracle SVD reconstructs its input") {
  oracle::Gen g(10);
  for (int t = 0; t < 20; ++t) {
    const int m = g.integer(3, 30), n = g.integer(1, m);
    const Eigen::MatrixXd a = g.matrix(m, n);
    const oracle::Svd s = oracle::jacobi_svd(a);
    CHECK((s.u * s.sigma.asDiagonal() * s.v.transpose() - a).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("least squares agrees with the Jacobi oracle on 100 random systems") {
  oracle::Gen g(11);
  for (int t = 0; t < 100; ++t) {
    const int m = g.integer(5, 60);
    const int n = g.integer(1, std::min(m, 15));
    const int k = g.integer(1, 3);
    Eigen::MatrixXd a = g.matrix(m, n);
    if (t % 4 == 0 && n > 2) {
      a.col(n - 1) = 2.0 * a.col(0) - a.col(1);  // rank deficient
    }
    if (t % 5 == 0) {
      a.col(0) *= 1e3;  // badly scaled column
    }
    const Eigen::MatrixXd b = g.matrix(m, k, -5, 5);
    const LeastSquaresResult ls = solve_least_squares(a, b, {1e-10, false});
    const Eigen::MatrixXd ref = oracle::least_squares(a, b, 1e-10);
    CHECK((ls.solution - ref).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
    CHECK(ls.columns == n);
    CHECK(ls.rank == ((t % 4 == 0 && n > 2) ? n - 1 : n));
  }
}

TEST_CASE("equilibration leaves full-rank solutions unchanged") {
  oracle::Gen g(12);
  for (int t = 0; t < 50; ++t) {
    Eigen::MatrixXd a = g.matrix(40, 6);
    a.col(2) *= 1e4;
    a.col(4) *= 1e-3;
    const Eigen::VectorXd b = g.matrix(40, 1);
    const auto plain = solve_least_squares(a, b, {1e-12, false});
    const auto eq = solve_least_squares(a, b, {1e-12, true});
    const Eigen::MatrixXd ref = oracle::least_squares(a, b, 1e-14);
    CHECK((eq.solution - ref).norm() < 1e-8 * ref.norm());
    CHECK((plain.solution - ref).norm() < 1e-8 * ref.norm());
    CHECK(eq.condition < plain.condition);
  }
}

TEST_CASE("residual of the solution is orthogonal to the column space") {
  oracle::Gen g(13);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd a = g.matrix(30, 5);
    const Eigen::VectorXd b = g.matrix(30, 1, -3, 3);
    const auto ls = solve_least_squares(a, b);
    const Eigen::VectorXd r = b - a * ls.solution;
    CHECK((a.transpose() * r).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("zero system gives the zero minimum-norm solution") {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Zero(10, 3);
  const Eigen::MatrixXd b = Eigen::MatrixXd::Ones(10, 1);
  const auto ls = solve_least_squares(a, b);
  CHECK(ls.rank == 0);
  CHECK(ls.solution.isZero());
  CHECK(std::isinf(ls.condition));
}

TEST_CASE("pseudo-inverse satisfies the Penrose conditions") {
  oracle::Gen g(14);
  for (int t = 0; t < 30; ++t) {
    Eigen::MatrixXd a = g.matrix(g.integer(2, 12), g.integer(2, 12));
    if (t % 3 == 0) a.row(0).setZero();
    const Eigen::MatrixXd p = pseudo_inverse(a);
    CHECK((a * p * a - a).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((p * a * p - p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(((a * p).transpose() - a * p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(((p * a).transpose() - p * a).cwiseAbs().maxCoeff() < 1e-10);
  }
}
