#include "mfcov/metric.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace mfcov {

std::pair<SpdMatrix, SpdMatrix> similarity_dissimilarity(
    const SpdMatrix& cov0, const SpdMatrix& cov1, const Eigen::VectorXd& mean0,
    const Eigen::VectorXd& mean1) {
  const int d = cov0.dim();
  if (cov1.dim() != d || mean0.size() != d || mean1.size() != d) {
    throw std::invalid_argument("similarity_dissimilarity: dimension mismatch");
  }
  const Eigen::VectorXd gap = mean0 - mean1;
  SpdMatrix t_mat(cov0.mat() + cov1.mat());
  SpdMatrix d_mat(t_mat.mat() + gap * gap.transpose());
  return {std::move(t_mat), std::move(d_mat)};
}

MetricMatrix gmml_metric(const SpdMatrix& t_mat, const SpdMatrix& d_mat,
                         double t, std::string provenance) {
  if (!(t >= 0.0) || !(t <= 1.0)) {
    throw std::invalid_argument("gmml_metric: t must lie in [0, 1]");
  }
  if (t_mat.dim() != d_mat.dim()) {
    throw std::invalid_argument("gmml_metric: dimension mismatch");
  }
  const Eigen::MatrixXd t_sqrt = t_mat.sqrt();
  const Eigen::MatrixXd t_inv_sqrt = t_mat.inv_sqrt();
  const SpdMatrix inner(symmetrize(t_sqrt * d_mat.mat() * t_sqrt));
  const Eigen::MatrixXd powered = inner.pow(t);
  return MetricMatrix{SpdMatrix(symmetrize(t_inv_sqrt * powered * t_inv_sqrt)),
                      t, std::move(provenance)};
}

MetricMatrix gmml_from_estimates(const Eigen::MatrixXd& cov0,
                                 const Eigen::MatrixXd& cov1,
                                 const Eigen::VectorXd& mean0,
                                 const Eigen::VectorXd& mean1, double t,
                                 std::string provenance) {
  for (const Eigen::MatrixXd* c : {&cov0, &cov1}) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(*c));
    if (es.eigenvalues().minCoeff() <= 0.0) {
      throw std::domain_error(
          "gmml_from_estimates: indefinite covariance estimate; the geodesic "
          "metric is undefined for non-SPD inputs");
    }
  }
  auto [t_mat, d_mat] = similarity_dissimilarity(
      SpdMatrix(cov0), SpdMatrix(cov1), mean0, mean1);
  return gmml_metric(t_mat, d_mat, t, std::move(provenance));
}

double mean_relative_error(const MetricMatrix& a_hat,
                           const MetricMatrix& a_ref,
                           const std::vector<Eigen::VectorXd>& test_points) {
  if (test_points.empty()) {
    throw std::invalid_argument("mean_relative_error: empty test set");
  }
  const int d = a_ref.a.dim();
  if (a_hat.a.dim() != d) {
    throw std::invalid_argument("mean_relative_error: dimension mismatch");
  }
  double sum = 0.0;
  int used = 0;
  int skipped = 0;
  for (const Eigen::VectorXd& y : test_points) {
    if (y.size() != d) {
      throw std::invalid_argument("mean_relative_error: test point size");
    }
    const double ref_norm = std::sqrt(y.dot(a_ref.a.mat() * y));
    if (ref_norm == 0.0) {
      ++skipped;
      continue;
    }
    const double hat_norm = std::sqrt(y.dot(a_hat.a.mat() * y));
    sum += std::abs(hat_norm - ref_norm) / ref_norm;
    ++used;
  }
  if (skipped > 0) {
    std::cerr << "mean_relative_error: skipped " << skipped
              << " test point(s) with zero reference norm\n";
  }
  if (used == 0) {
    throw std::runtime_error(
        "mean_relative_error: every test point had zero reference norm");
  }
  return sum / static_cast<double>(used);
}

}  // namespace mfcov
