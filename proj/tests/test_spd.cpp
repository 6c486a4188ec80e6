#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "../vendor/doctest.h"

#include <cmath>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "mfcov/rng.hpp"
#include "mfcov/spd.hpp"

using namespace mfcov;

namespace {

SpdMatrix random_spd(int d, RngStream& rng) {
  const Eigen::MatrixXd a = rng.normal_matrix(d, d);
  return SpdMatrix(
      symmetrize(a.transpose() * a + 0.1 * Eigen::MatrixXd::Identity(d, d)));
}

// Independent oracle for the tangent log map: the affine-invariant log at A
// equals log(B A^{-1}) A computed with the general (nonsymmetric) matrix
// logarithm, since A^{1/2} log(A^{-1/2} B A^{-1/2}) A^{1/2} is a similarity
// rearrangement of that product.
Eigen::MatrixXd log_map_oracle(const SpdMatrix& a, const SpdMatrix& b) {
  const Eigen::MatrixXd prod = b.mat() * a.inverse();
  return Eigen::MatrixXd(prod.log()) * a.mat();
}

}  // namespace

TEST_CASE("SymMatrix accepts symmetric and rejects asymmetric input") {
  Eigen::MatrixXd s(2, 2);
  s << 1.0, 2.0, 2.0, -3.0;
  const SymMatrix sym(s);
  CHECK(sym.dim() == 2);
  CHECK(sym.mat() == s);

  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 0.5, -3.0;
  CHECK_THROWS_AS(SymMatrix{bad}, std::invalid_argument);
}

TEST_CASE("SpdMatrix validates positive definiteness") {
  Eigen::MatrixXd ok(2, 2);
  ok << 2.0, 1.0, 1.0, 2.0;
  const SpdMatrix a(ok);
  CHECK(a.min_eigenvalue() == doctest::Approx(1.0));
  CHECK(a.max_eigenvalue() == doctest::Approx(3.0));

  Eigen::MatrixXd indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  CHECK_THROWS_AS(SpdMatrix{indef}, std::invalid_argument);

  Eigen::MatrixXd psd(2, 2);
  psd << 1.0, 1.0, 1.0, 1.0;  // singular
  CHECK_THROWS_AS(SpdMatrix{psd}, std::invalid_argument);
}

TEST_CASE("SpdMatrix::from_floored lifts nonpositive eigenvalues") {
  Eigen::MatrixXd psd(2, 2);
  psd << 1.0, 1.0, 1.0, 1.0;
  const SpdMatrix a = SpdMatrix::from_floored(psd);
  CHECK(a.min_eigenvalue() > 0.0);
  // The positive eigenvalue is untouched.
  CHECK(a.max_eigenvalue() == doctest::Approx(2.0));
}

TEST_CASE("matrix functions match closed forms on a frozen 2x2") {
  // A = [[2,1],[1,2]] has eigenvalues 1 and 3 with fixed eigenvectors, so
  // every spectral function is hand-computable.
  Eigen::MatrixXd m(2, 2);
  m << 2.0, 1.0, 1.0, 2.0;
  const SpdMatrix a(m);

  const double r3 = std::sqrt(3.0);
  Eigen::MatrixXd sqrt_expected(2, 2);
  sqrt_expected << (r3 + 1.0) / 2.0, (r3 - 1.0) / 2.0, (r3 - 1.0) / 2.0,
      (r3 + 1.0) / 2.0;
  CHECK((a.sqrt() - sqrt_expected).norm() <= 1e-14);

  Eigen::MatrixXd log_expected(2, 2);
  const double l3 = std::log(3.0);
  log_expected << l3 / 2.0, l3 / 2.0, l3 / 2.0, l3 / 2.0;
  CHECK((a.log() - log_expected).norm() <= 1e-14);

  CHECK((a.inverse() - m.inverse()).norm() <= 1e-14);
  CHECK((a.sqrt() * a.inv_sqrt() - Eigen::MatrixXd::Identity(2, 2)).norm() <=
        1e-14);
  // pow(t) at t = 2 is the plain square.
  CHECK((a.pow(2.0) - m * m).norm() <= 1e-12);
}

TEST_CASE("riemannian_log matches the general matrix-log oracle") {
  RngStream rng(314, 1);
  for (int d : {2, 3, 5}) {
    for (int i = 0; i < 20; ++i) {
      const SpdMatrix a = random_spd(d, rng);
      const SpdMatrix b = random_spd(d, rng);
      const Eigen::MatrixXd ours = riemannian_log(a, b).mat();
      const Eigen::MatrixXd oracle = log_map_oracle(a, b);
      CHECK((ours - oracle).norm() / std::max(1.0, oracle.norm()) <= 1e-10);
    }
  }
}

TEST_CASE("riemannian_exp inverts riemannian_log") {
  RngStream rng(314, 2);
  for (int i = 0; i < 30; ++i) {
    const SpdMatrix a = random_spd(3, rng);
    const SpdMatrix b = random_spd(3, rng);
    const SpdMatrix back = riemannian_exp(a, riemannian_log(a, b));
    CHECK((back.mat() - b.mat()).norm() / b.mat().norm() <= 1e-10);
    // And in the other order: exp then log.
    const SymMatrix x(Eigen::MatrixXd(
        0.5 * symmetrize(rng.normal_matrix(3, 3))));
    const SymMatrix xb = riemannian_log(a, riemannian_exp(a, x));
    CHECK((xb.mat() - x.mat()).norm() <= 1e-10 * (1.0 + x.mat().norm()));
  }
}

TEST_CASE("intrinsic_distance matches the generalized-eigenvalue oracle") {
  RngStream rng(314, 3);
  for (int i = 0; i < 20; ++i) {
    const SpdMatrix a = random_spd(4, rng);
    const SpdMatrix b = random_spd(4, rng);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(b.mat(),
                                                                  a.mat());
    double sq = 0.0;
    for (int k = 0; k < 4; ++k) {
      sq += std::pow(std::log(ges.eigenvalues()[k]), 2);
    }
    CHECK(intrinsic_distance(a, b) == doctest::Approx(std::sqrt(sq)).epsilon(1e-10));
  }
}

TEST_CASE("intrinsic_distance is symmetric, definite, and inversion-invariant") {
  RngStream rng(314, 4);
  const SpdMatrix a = random_spd(3, rng);
  const SpdMatrix b = random_spd(3, rng);
  CHECK(intrinsic_distance(a, a) <= 1e-12);
  CHECK(intrinsic_distance(a, b) ==
        doctest::Approx(intrinsic_distance(b, a)).epsilon(1e-12));
  // d(A, B) = d(A^{-1}, B^{-1}) under the affine-invariant metric.
  const SpdMatrix ai(a.inverse());
  const SpdMatrix bi(b.inverse());
  CHECK(intrinsic_distance(a, b) ==
        doctest::Approx(intrinsic_distance(ai, bi)).epsilon(1e-10));
}

TEST_CASE("geodesic endpoints, midpoint equation, and power oracle") {
  RngStream rng(314, 5);
  const SpdMatrix a = random_spd(3, rng);
  const SpdMatrix b = random_spd(3, rng);
  CHECK((geodesic(a, b, 0.0).mat() - a.mat()).norm() <= 1e-12);
  CHECK((geodesic(a, b, 1.0).mat() - b.mat()).norm() <= 1e-12);

  // The geodesic midpoint is the geometric mean: M A^{-1} M = B.
  const SpdMatrix mid = geodesic(a, b, 0.5);
  CHECK((mid.mat() * a.inverse() * mid.mat() - b.mat()).norm() /
            b.mat().norm() <=
        1e-10);

  // Independent oracle via the general fractional matrix power:
  // gamma(t) = (B A^{-1})^t A.
  const double t = 0.3;
  const Eigen::MatrixXd prod = b.mat() * a.inverse();
  const Eigen::MatrixXd oracle = prod.pow(t) * a.mat();
  CHECK((geodesic(a, b, t).mat() - oracle).norm() / oracle.norm() <= 1e-10);
}

TEST_CASE("congruence computes Y^-1 A Y^-1 for both overloads") {
  RngStream rng(314, 6);
  const SpdMatrix y = random_spd(3, rng);
  const SpdMatrix a = random_spd(3, rng);
  const Eigen::MatrixXd yi = y.inverse();
  const Eigen::MatrixXd expected = symmetrize(yi * a.mat() * yi);
  CHECK((congruence(y, a).mat() - expected).norm() <= 1e-12);

  const SymMatrix s(Eigen::MatrixXd(symmetrize(rng.normal_matrix(3, 3))));
  const Eigen::MatrixXd expected_sym = symmetrize(yi * s.mat() * yi);
  CHECK((congruence(y, s).mat() - expected_sym).norm() <= 1e-12);
}

TEST_CASE("log_spectral_function divided differences are stable") {
  const SpectralFunction f = log_spectral_function(1e-12);
  CHECK(f.value(1.0) == 0.0);
  CHECK(f.value(std::exp(2.0)) == doctest::Approx(2.0));
  // Divided difference (log a - log b) / (a - b).
  CHECK(f.dd(2.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  // Confluent limit is 1/a.
  CHECK(f.dd(3.0, 3.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  // Nearly-equal arguments stay accurate (naive subtraction would lose most
  // digits here).
  const double a = 1.0 + 1e-9;
  CHECK(f.dd(a, 1.0) == doctest::Approx(1.0 / std::sqrt(a)).epsilon(1e-6));
  // Both below the floor: the function is constant there.
  CHECK(f.dd(1e-15, 1e-16) == 0.0);
}

TEST_CASE("sqrt_spectral_function divided difference") {
  const SpectralFunction f = sqrt_spectral_function();
  CHECK(f.value(4.0) == doctest::Approx(2.0));
  CHECK(f.dd(4.0, 1.0) == doctest::Approx((2.0 - 1.0) / 3.0));
  CHECK(f.dd(4.0, 4.0) == doctest::Approx(0.25));
}

TEST_CASE("spectral_derivative matches central differences for the log") {
  RngStream rng(314, 7);
  const SpectralFunction logf = log_spectral_function(0.0);
  for (int i = 0; i < 10; ++i) {
    const SpdMatrix a = random_spd(3, rng);
    const Eigen::MatrixXd dir = symmetrize(rng.normal_matrix(3, 3));
    const Eigen::MatrixXd got = spectral_derivative(
        a.eigenvalues(), a.eigenvectors(), logf, dir);
    const double h = 1e-6;
    const SpdMatrix ap(Eigen::MatrixXd(a.mat() + h * dir));
    const SpdMatrix am(Eigen::MatrixXd(a.mat() - h * dir));
    const Eigen::MatrixXd fd = (ap.log() - am.log()) / (2.0 * h);
    CHECK((got - fd).norm() / std::max(1.0, fd.norm()) <= 1e-8);
  }
}

TEST_CASE("spectral_derivative handles repeated eigenvalues") {
  // At A = c I every direction is an eigen-direction with a confluent divided
  // difference, so D log_A[E] = E / c exactly.
  const SpdMatrix a(Eigen::MatrixXd(2.0 * Eigen::MatrixXd::Identity(3, 3)));
  Eigen::MatrixXd dir(3, 3);
  dir << 0.0, 1.0, 0.5, 1.0, -1.0, 0.25, 0.5, 0.25, 2.0;
  const Eigen::MatrixXd got = spectral_derivative(
      a.eigenvalues(), a.eigenvectors(), log_spectral_function(0.0), dir);
  CHECK((got - dir / 2.0).norm() <= 1e-14);
}

TEST_CASE("spd_function applies scalar functions through the spectrum") {
  RngStream rng(314, 8);
  const SpdMatrix a = random_spd(3, rng);
  const Eigen::MatrixXd same =
      spd_function(a, [](double x) { return x; });
  CHECK((same - a.mat()).norm() <= 1e-13);
  // x -> 1/x through the generic applier agrees with the dedicated inverse.
  const Eigen::MatrixXd inv =
      spd_function(a, [](double x) { return 1.0 / x; });
  CHECK((inv - a.inverse()).norm() <= 1e-13);
}
