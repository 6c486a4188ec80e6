#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "../vendor/doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "mfcov/metric.hpp"
#include "mfcov/rng.hpp"
#include "mfcov/spd.hpp"

using namespace mfcov;

namespace {

SpdMatrix random_spd(int d, RngStream& rng) {
  const Eigen::MatrixXd a = rng.normal_matrix(d, d);
  return SpdMatrix(
      symmetrize(a.transpose() * a + 0.1 * Eigen::MatrixXd::Identity(d, d)));
}

}  // namespace

TEST_CASE("similarity_dissimilarity on a frozen two-class instance") {
  Eigen::MatrixXd c0(2, 2), c1(2, 2);
  c0 << 2.0, 0.5, 0.5, 1.0;
  c1 << 1.0, -0.25, -0.25, 3.0;
  Eigen::VectorXd m0(2), m1(2);
  m0 << 1.0, 0.0;
  m1 << 0.0, 2.0;
  const auto [t_mat, d_mat] =
      similarity_dissimilarity(SpdMatrix(c0), SpdMatrix(c1), m0, m1);
  Eigen::MatrixXd expected_t = c0 + c1;
  const Eigen::VectorXd g = m0 - m1;
  Eigen::MatrixXd expected_d = expected_t + g * g.transpose();
  CHECK((t_mat.mat() - expected_t).norm() <= 1e-14);
  CHECK((d_mat.mat() - expected_d).norm() <= 1e-14);
}

TEST_CASE("gmml_metric endpoints: t=0 gives T^{-1}, t=1 gives D") {
  RngStream rng(505, 1);
  const SpdMatrix t_mat = random_spd(4, rng);
  const SpdMatrix d_mat = random_spd(4, rng);
  const MetricMatrix a0 = gmml_metric(t_mat, d_mat, 0.0);
  const MetricMatrix a1 = gmml_metric(t_mat, d_mat, 1.0);
  CHECK((a0.a.mat() - t_mat.inverse()).norm() / t_mat.inverse().norm() <=
        1e-12);
  CHECK((a1.a.mat() - d_mat.mat()).norm() / d_mat.mat().norm() <= 1e-12);
}

TEST_CASE("gmml_metric equals the affine-invariant geodesic from T^{-1} to D") {
  RngStream rng(505, 2);
  for (double t : {0.1, 0.35, 0.8}) {
    const SpdMatrix t_mat = random_spd(3, rng);
    const SpdMatrix d_mat = random_spd(3, rng);
    const MetricMatrix a = gmml_metric(t_mat, d_mat, t, "tag");
    const SpdMatrix tinv(t_mat.inverse());
    const SpdMatrix geo = geodesic(tinv, d_mat, t);
    CHECK((a.a.mat() - geo.mat()).norm() / geo.mat().norm() <= 1e-12);
    CHECK(a.t == t);
    CHECK(a.provenance == "tag");
  }
}

TEST_CASE("gmml_metric rejects out-of-range t") {
  RngStream rng(505, 3);
  const SpdMatrix t_mat = random_spd(2, rng);
  const SpdMatrix d_mat = random_spd(2, rng);
  CHECK_THROWS_AS(gmml_metric(t_mat, d_mat, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(gmml_metric(t_mat, d_mat, 1.5), std::invalid_argument);
}

TEST_CASE("gmml_from_estimates matches the direct construction on SPD input") {
  RngStream rng(505, 4);
  const SpdMatrix c0 = random_spd(3, rng);
  const SpdMatrix c1 = random_spd(3, rng);
  const Eigen::VectorXd m0 = rng.normal_vector(3);
  const Eigen::VectorXd m1 = rng.normal_vector(3);
  const MetricMatrix got =
      gmml_from_estimates(c0.mat(), c1.mat(), m0, m1, 0.1, "mrmf");
  const auto [t_mat, d_mat] = similarity_dissimilarity(c0, c1, m0, m1);
  const MetricMatrix want = gmml_metric(t_mat, d_mat, 0.1);
  CHECK((got.a.mat() - want.a.mat()).norm() / want.a.mat().norm() <= 1e-12);
  CHECK(got.provenance == "mrmf");
  CHECK(got.t == 0.1);
}

TEST_CASE("gmml_from_estimates refuses indefinite class covariances") {
  RngStream rng(505, 5);
  const SpdMatrix good = random_spd(3, rng);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
  bad(2, 2) = -0.05;  // one negative eigenvalue
  const Eigen::VectorXd m0 = rng.normal_vector(3);
  const Eigen::VectorXd m1 = rng.normal_vector(3);
  CHECK_THROWS_AS(gmml_from_estimates(bad, good.mat(), m0, m1, 0.1),
                  std::domain_error);
  CHECK_THROWS_AS(gmml_from_estimates(good.mat(), bad, m0, m1, 0.1),
                  std::domain_error);
  // Singular (zero eigenvalue) is refused too: not strictly positive.
  Eigen::MatrixXd sing = Eigen::MatrixXd::Identity(3, 3);
  sing(0, 0) = 0.0;
  CHECK_THROWS_AS(gmml_from_estimates(sing, good.mat(), m0, m1, 0.1),
                  std::domain_error);
}

TEST_CASE("mean_relative_error on a hand-checkable diagonal pair") {
  // A_ref = I, A_hat = diag(4, 1): ||y||_hat = sqrt(4 y1^2 + y2^2).
  MetricMatrix ref{SpdMatrix(Eigen::MatrixXd::Identity(2, 2)), 0.0, "ref"};
  Eigen::MatrixXd hat_m(2, 2);
  hat_m << 4.0, 0.0, 0.0, 1.0;
  MetricMatrix hat{SpdMatrix(hat_m), 0.0, "hat"};
  std::vector<Eigen::VectorXd> pts;
  Eigen::VectorXd e1(2), e2(2);
  e1 << 1.0, 0.0;
  e2 << 0.0, 3.0;
  pts = {e1, e2};
  // Point 1: |2 - 1| / 1 = 1.  Point 2: |3 - 3| / 3 = 0.  Mean = 0.5.
  CHECK(mean_relative_error(hat, ref, pts) == doctest::Approx(0.5));
  // Identical metrics give zero error.
  CHECK(mean_relative_error(ref, ref, pts) == doctest::Approx(0.0));
}

TEST_CASE("mean_relative_error skips zero-norm points and can run dry") {
  MetricMatrix ref{SpdMatrix(Eigen::MatrixXd::Identity(2, 2)), 0.0, ""};
  MetricMatrix hat{SpdMatrix(2.0 * Eigen::MatrixXd::Identity(2, 2)), 0.0, ""};
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd e1(2);
  e1 << 1.0, 0.0;
  // The zero point is excluded; the remaining point gives |sqrt2 - 1|.
  const double got = mean_relative_error(hat, ref, {zero, e1});
  CHECK(got == doctest::Approx(std::sqrt(2.0) - 1.0));
  CHECK_THROWS_AS(mean_relative_error(hat, ref, {zero}), std::runtime_error);
  // An empty test set is a caller error, distinct from the all-skipped case.
  CHECK_THROWS_AS(mean_relative_error(hat, ref, {}), std::invalid_argument);
}

TEST_CASE("mean_relative_error is invariant to common metric rescaling... "
          "it is not: scaling the estimate scales the induced norm") {
  // Guard against an implementation that silently normalizes: doubling the
  // estimated metric must change the error.
  MetricMatrix ref{SpdMatrix(Eigen::MatrixXd::Identity(2, 2)), 0.0, ""};
  MetricMatrix hat{SpdMatrix(4.0 * Eigen::MatrixXd::Identity(2, 2)), 0.0, ""};
  Eigen::VectorXd e1(2);
  e1 << 1.0, 0.0;
  CHECK(mean_relative_error(hat, ref, {e1}) == doctest::Approx(1.0));
}
