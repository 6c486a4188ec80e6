#ifndef MFCOV_METRIC_HPP
#define MFCOV_METRIC_HPP

/// Geometric-mean metric learning: similarity/dissimilarity matrices from
/// class statistics, the geodesic metric matrix, and mean-relative-error
/// evaluation of estimated metrics.

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mfcov/spd.hpp"

namespace mfcov {

/// A learned Mahalanobis metric matrix together with the geodesic parameter
/// that produced it and a tag naming the covariance estimator it came from.
struct MetricMatrix {
  SpdMatrix a;
  double t = 0.0;
  std::string provenance;
};

/// Similarity and dissimilarity second moments of a two-class problem:
/// T = cov0 + cov1 and D = T + (m0 - m1)(m0 - m1)^T.
std::pair<SpdMatrix, SpdMatrix> similarity_dissimilarity(
    const SpdMatrix& cov0, const SpdMatrix& cov1, const Eigen::VectorXd& mean0,
    const Eigen::VectorXd& mean1);

/// Geodesic metric matrix T^{-1/2} (T^{1/2} D T^{1/2})^t T^{-1/2}; equals the
/// affine-invariant geodesic from T^{-1} to D at parameter t.
MetricMatrix gmml_metric(const SpdMatrix& t_mat, const SpdMatrix& d_mat,
                         double t, std::string provenance = {});

/// Builds the metric from estimated class covariances, refusing indefinite
/// estimates: any class covariance whose smallest eigenvalue is not strictly
/// positive raises std::domain_error instead of being repaired.
MetricMatrix gmml_from_estimates(const Eigen::MatrixXd& cov0,
                                 const Eigen::MatrixXd& cov1,
                                 const Eigen::VectorXd& mean0,
                                 const Eigen::VectorXd& mean1, double t,
                                 std::string provenance = {});

/// Mean relative error of the norms induced by an estimated metric against a
/// reference metric over a test set: mean of |‖y‖_Ahat - ‖y‖_Aref| / ‖y‖_Aref.
/// Test points with ‖y‖_Aref = 0 (only y = 0 for SPD references) are excluded
/// with a warning on stderr; throws if nothing remains.
double mean_relative_error(const MetricMatrix& a_hat,
                           const MetricMatrix& a_ref,
                           const std::vector<Eigen::VectorXd>& test_points);

}  // namespace mfcov

#endif  // MFCOV_METRIC_HPP
