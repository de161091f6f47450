#include "nima/gravity.hpp"

#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "nima/csv.hpp"
#include "nima/error.hpp"
#include "nima/linalg.hpp"

namespace nima::gravity {

namespace {

const std::vector<std::string> kSetHeader{"alpha_rad", "beta_rad", "fx_N", "fy_N", "fz_N"};
const std::vector<std::string> kModelHeader{"cx", "cy", "cz"};
const char* const kFeatureNames[5] = {"sin(alpha)", "cos(alpha)", "sin(beta)", "cos(beta)", "constant"};

}  // namespace

Eigen::RowVectorXd features(double alpha, double beta) {
  Eigen::RowVectorXd row(5);
  row << std::sin(alpha), std::cos(alpha), std::sin(beta), std::cos(beta), 1.0;
  return row;
}

Vec3 Model::predict(double alpha, double beta) const {
  return (features(alpha, beta) * coefficients).transpose();
}

Eigen::MatrixXd build_design_matrix(const CalibrationSet& set) {
  if (set.size() < 5) {
    throw InsufficientData("gravity calibration needs at least 5 records, got " + std::to_string(set.size()));
  }
  Eigen::MatrixXd a(set.size(), 5);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!std::isfinite(set[i].alpha) || !std::isfinite(set[i].beta)) {
      throw DataError("gravity calibration record " + std::to_string(i) + " has non-finite angles");
    }
    a.row(static_cast<Eigen::Index>(i)) = features(set[i].alpha, set[i].beta);
  }
  return a;
}

FitReport fit(const CalibrationSet& set) {
  const Eigen::MatrixXd a = build_design_matrix(set);
  Eigen::MatrixXd b(set.size(), 3);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set[i].force.allFinite()) {
      throw DataError("gravity calibration record " + std::to_string(i) + " has non-finite force");
    }
    b.row(static_cast<Eigen::Index>(i)) = set[i].force.transpose();
  }

  const LeastSquaresResult ls = solve_least_squares(a, b, {1e-10, false});
  if (!ls.full_rank() || ls.condition > kMaxCondition) {
    // Report the regressor combination the poses fail to excite.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
    const Eigen::VectorXd weak = svd.matrixV().col(4);
    Eigen::Index dominant = 0;
    weak.cwiseAbs().maxCoeff(&dominant);
    std::string direction;
    for (int j = 0; j < 5; ++j) {
      if (std::abs(weak(j)) > 1e-3) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s%+.3f*%s", direction.empty() ? "" : " ", weak(j), kFeatureNames[j]);
        direction += buf;
      }
    }
    throw SingularSystem("gravity calibration poses are not exciting: rank " + std::to_string(ls.rank) +
                             "/5, condition " + std::to_string(ls.condition) + ", weakest direction [" +
                             direction + "] dominated by " + kFeatureNames[dominant],
                         ls.rank, ls.condition);
  }

  FitReport report;
  report.model.coefficients = ls.solution;
  report.condition = ls.condition;
  const Eigen::MatrixXd residual = a * ls.solution - b;
  report.residual_rms = (residual.colwise().squaredNorm() / static_cast<double>(set.size())).cwiseSqrt().transpose();
  return report;
}

Vec3 compensate(const Model& model, double alpha, double beta, const Vec3& raw) {
  return raw - model.predict(alpha, beta);
}

CalibrationSet read_calibration_set(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, kSetHeader);
  CalibrationSet set;
  set.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    set.push_back({r[0], r[1], Vec3(r[2], r[3], r[4])});
  }
  return set;
}

void write_calibration_set(const std::filesystem::path& path, const CalibrationSet& set) {
  CsvWriter w(path, kSetHeader);
  for (const auto& r : set) {
    w.row({r.alpha, r.beta, r.force.x(), r.force.y(), r.force.z()});
  }
  w.close();
}

Model read_model(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, kModelHeader);
  if (t.rows.size() != 5) {
    throw DataError(path.string() + ": gravity model needs exactly 5 coefficient rows");
  }
  Model m;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 3; ++j) {
      m.coefficients(i, j) = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  return m;
}

void write_model(const std::filesystem::path& path, const Model& model) {
  CsvWriter w(path, kModelHeader);
  for (int i = 0; i < 5; ++i) {
    w.row({model.coefficients(i, 0), model.coefficients(i, 1), model.coefficients(i, 2)});
  }
  w.close();
}

}  // namespace nima::gravity
