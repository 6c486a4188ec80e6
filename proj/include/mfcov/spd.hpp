#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

namespace mfcov {

/// Exact symmetrization (M + M^T) / 2.
inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

/// Symmetric d x d matrix (a tangent vector to the SPD cone).
///
/// Construction symmetrizes the input exactly; input with relative asymmetry
/// above 1e-8 is rejected as a caller bug rather than silently repaired.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Eigen::MatrixXd m) {
    if (m.rows() != m.cols() || m.rows() < 1) {
      throw std::invalid_argument("SymMatrix: input must be square and nonempty");
    }
    const double scale = std::max(1.0, m.norm());
    if ((m - m.transpose()).norm() > 1e-8 * scale) {
      throw std::invalid_argument("SymMatrix: input is not symmetric");
    }
    mat_ = symmetrize(m);
  }

  int dim() const { return static_cast<int>(mat_.rows()); }
  const Eigen::MatrixXd& mat() const { return mat_; }

 private:
  Eigen::MatrixXd mat_;
};

/// Symmetric positive definite d x d matrix with its eigendecomposition.
///
/// Construction symmetrizes the input as (M + M^T)/2, eigendecomposes it, and
/// validates min eigenvalue > eps_pd = 1e-12 * max(1, max eigenvalue).  The
/// decomposition is computed once here (validation already needs the extreme
/// eigenvalues) and kept, so spectral functions of the same base matrix never
/// re-decompose; the object is immutable afterwards and therefore safe to
/// share across threads.
class SpdMatrix {
 public:
  SpdMatrix() = default;

  explicit SpdMatrix(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols() || m.rows() < 1) {
      throw std::invalid_argument("SpdMatrix: input must be square and nonempty");
    }
    const double scale = std::max(1.0, m.norm());
    if ((m - m.transpose()).norm() > 1e-8 * scale) {
      throw std::invalid_argument("SpdMatrix: input is not symmetric");
    }
    mat_ = symmetrize(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mat_);
    if (es.info() != Eigen::Success) {
      throw std::runtime_error("SpdMatrix: eigendecomposition failed");
    }
    evals_ = es.eigenvalues();
    evecs_ = es.eigenvectors();
    const double eps_pd = 1e-12 * std::max(1.0, evals_.maxCoeff());
    if (evals_.minCoeff() <= eps_pd) {
      throw std::invalid_argument(
          "SpdMatrix: matrix is not positive definite (min eigenvalue " +
          std::to_string(evals_.minCoeff()) + ")");
    }
  }

  /// Builds from a symmetric matrix after flooring its eigenvalues at
  /// eps_pd = 1e-12 * max(1, max eigenvalue); always succeeds on symmetric
  /// input.  Used where an estimator must return a valid SPD matrix from a
  /// possibly numerically semidefinite candidate.
  static SpdMatrix from_floored(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd s = symmetrize(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.info() != Eigen::Success) {
      throw std::runtime_error("SpdMatrix: eigendecomposition failed");
    }
    const double eps_pd = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(2.0 * eps_pd);
    SpdMatrix out;
    out.evals_ = lam;
    out.evecs_ = es.eigenvectors();
    out.mat_ = symmetrize(out.evecs_ * lam.asDiagonal() * out.evecs_.transpose());
    return out;
  }

  int dim() const { return static_cast<int>(mat_.rows()); }
  const Eigen::MatrixXd& mat() const { return mat_; }
  const Eigen::VectorXd& eigenvalues() const { return evals_; }
  const Eigen::MatrixXd& eigenvectors() const { return evecs_; }
  double min_eigenvalue() const { return evals_.minCoeff(); }
  double max_eigenvalue() const { return evals_.maxCoeff(); }

  /// Q f(Lambda) Q^T for an arbitrary scalar function of the eigenvalues.
  Eigen::MatrixXd apply(const std::function<double(double)>& f) const {
    Eigen::VectorXd fl(evals_.size());
    for (int i = 0; i < evals_.size(); ++i) fl[i] = f(evals_[i]);
    return symmetrize(evecs_ * fl.asDiagonal() * evecs_.transpose());
  }

  Eigen::MatrixXd sqrt() const {
    return apply([](double x) { return std::sqrt(x); });
  }
  Eigen::MatrixXd inv_sqrt() const {
    return apply([](double x) { return 1.0 / std::sqrt(x); });
  }
  Eigen::MatrixXd log() const {
    return apply([](double x) { return std::log(x); });
  }
  Eigen::MatrixXd inverse() const {
    return apply([](double x) { return 1.0 / x; });
  }
  Eigen::MatrixXd pow(double t) const {
    return apply([t](double x) { return std::pow(x, t); });
  }

 private:
  Eigen::MatrixXd mat_;
  Eigen::VectorXd evals_;
  Eigen::MatrixXd evecs_;
};

/// Q f(Lambda) Q^T of an SPD matrix; the result is exactly symmetrized.
Eigen::MatrixXd spd_function(const SpdMatrix& a,
                             const std::function<double(double)>& f);

/// Riemannian log map at base A:
///   log_A(B) = A^{1/2} log(A^{-1/2} B A^{-1/2}) A^{1/2},
/// a symmetric matrix (tangent vector at A).
SymMatrix riemannian_log(const SpdMatrix& a, const SpdMatrix& b);

/// Riemannian exponential at base A:
///   exp_A(X) = A^{1/2} exp(A^{-1/2} X A^{-1/2}) A^{1/2}, an SPD matrix.
SpdMatrix riemannian_exp(const SpdMatrix& a, const SymMatrix& x);

/// Geodesic from A (t=0) to B (t=1):
///   gamma(t) = A^{1/2} (A^{-1/2} B A^{-1/2})^t A^{1/2}.
/// Requires t in [0, 1].
SpdMatrix geodesic(const SpdMatrix& a, const SpdMatrix& b, double t);

/// Affine-invariant distance
///   d(A, B) = || log(A^{-1/2} B A^{-1/2}) ||_F
///           = sqrt(sum_i log^2 lambda_i(A^{-1} B)).
double intrinsic_distance(const SpdMatrix& a, const SpdMatrix& b);

/// Congruence by the inverse of an SPD matrix: Y^{-1} A Y^{-1}.
/// Preserves positive definiteness; the result is exactly symmetrized.
SpdMatrix congruence(const SpdMatrix& y, const SpdMatrix& a);
SymMatrix congruence(const SpdMatrix& y, const SymMatrix& a);

/// A scalar spectral function together with its derivative, for Loewner
/// (Daleckii-Krein) divided-difference matrices.  `dd` must return the
/// divided difference (f(a) - f(b)) / (a - b) in a cancellation-stable form,
/// including the confluent case a == b (the derivative).
struct SpectralFunction {
  std::function<double(double)> value;
  std::function<double(double, double)> dd;
};

/// log with eigenvalues floored at `floor_at` (derivative zero below the
/// floor).  floor_at <= 0 disables flooring.
SpectralFunction log_spectral_function(double floor_at);

/// sqrt; divided difference 1/(sqrt(a)+sqrt(b)) is exact and stable.
SpectralFunction sqrt_spectral_function();

/// max(x, floor_at): the eigenvalue floor itself as a spectral function.
SpectralFunction floor_spectral_function(double floor_at);

/// Frechet derivative of a spectral function at A in direction E:
///   Df(A)[E] = Q (L o (Q^T E Q)) Q^T
/// with L the Loewner matrix of divided differences on A's eigenvalues.
/// The map is self-adjoint for the Frobenius inner product, which is what the
/// reverse-mode gradient of the estimation objective relies on.
Eigen::MatrixXd spectral_derivative(const Eigen::VectorXd& evals,
                                    const Eigen::MatrixXd& evecs,
                                    const SpectralFunction& f,
                                    const Eigen::MatrixXd& direction);

}  // namespace mfcov
