#include "mfcov/spd.hpp"

#include <cmath>

namespace mfcov {

Eigen::MatrixXd spd_function(const SpdMatrix& a,
                             const std::function<double(double)>& f) {
  return a.apply(f);
}

SymMatrix riemannian_log(const SpdMatrix& a, const SpdMatrix& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("riemannian_log: dimension mismatch");
  }
  const Eigen::MatrixXd rt = a.sqrt();
  const Eigen::MatrixXd irt = a.inv_sqrt();
  const SpdMatrix whitened(symmetrize(irt * b.mat() * irt));
  return SymMatrix(rt * whitened.log() * rt);
}

SpdMatrix riemannian_exp(const SpdMatrix& a, const SymMatrix& x) {
  if (a.dim() != x.dim()) {
    throw std::invalid_argument("riemannian_exp: dimension mismatch");
  }
  const Eigen::MatrixXd rt = a.sqrt();
  const Eigen::MatrixXd irt = a.inv_sqrt();
  const Eigen::MatrixXd w = symmetrize(irt * x.mat() * irt);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("riemannian_exp: eigendecomposition failed");
  }
  Eigen::VectorXd el(es.eigenvalues().size());
  for (int i = 0; i < el.size(); ++i) el[i] = std::exp(es.eigenvalues()[i]);
  const Eigen::MatrixXd ew =
      es.eigenvectors() * el.asDiagonal() * es.eigenvectors().transpose();
  return SpdMatrix(symmetrize(rt * ew * rt));
}

SpdMatrix geodesic(const SpdMatrix& a, const SpdMatrix& b, double t) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("geodesic: dimension mismatch");
  }
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("geodesic: t must lie in [0, 1]");
  }
  const Eigen::MatrixXd rt = a.sqrt();
  const Eigen::MatrixXd irt = a.inv_sqrt();
  const SpdMatrix whitened(symmetrize(irt * b.mat() * irt));
  return SpdMatrix(symmetrize(rt * whitened.pow(t) * rt));
}

double intrinsic_distance(const SpdMatrix& a, const SpdMatrix& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("intrinsic_distance: dimension mismatch");
  }
  const Eigen::MatrixXd irt = a.inv_sqrt();
  const SpdMatrix whitened(symmetrize(irt * b.mat() * irt));
  double s = 0.0;
  for (int i = 0; i < whitened.dim(); ++i) {
    const double l = std::log(whitened.eigenvalues()[i]);
    s += l * l;
  }
  return std::sqrt(s);
}

SpdMatrix congruence(const SpdMatrix& y, const SpdMatrix& a) {
  if (y.dim() != a.dim()) {
    throw std::invalid_argument("congruence: dimension mismatch");
  }
  const Eigen::MatrixXd yi = y.inverse();
  return SpdMatrix(symmetrize(yi * a.mat() * yi));
}

SymMatrix congruence(const SpdMatrix& y, const SymMatrix& a) {
  if (y.dim() != a.dim()) {
    throw std::invalid_argument("congruence: dimension mismatch");
  }
  const Eigen::MatrixXd yi = y.inverse();
  return SymMatrix(symmetrize(yi * a.mat() * yi));
}

SpectralFunction log_spectral_function(double floor_at) {
  SpectralFunction f;
  f.value = [floor_at](double x) { return std::log(std::max(x, floor_at)); };
  f.dd = [floor_at](double a, double b) {
    const bool ca = (a <= floor_at);
    const bool cb = (b <= floor_at);
    if (ca && cb) return 0.0;  // both clamped: locally constant
    if (a == b) return 1.0 / a;
    if (!ca && !cb) {
      // log(a) - log(b) = log1p((a - b)/b): stable for any spacing.
      return std::log1p((a - b) / b) / (a - b);
    }
    // One side clamped; the spacing cannot be small relative to the values.
    return (std::log(std::max(a, floor_at)) - std::log(std::max(b, floor_at))) /
           (a - b);
  };
  return f;
}

SpectralFunction sqrt_spectral_function() {
  SpectralFunction f;
  f.value = [](double x) { return std::sqrt(x); };
  f.dd = [](double a, double b) {
    return 1.0 / (std::sqrt(a) + std::sqrt(b));
  };
  return f;
}

SpectralFunction floor_spectral_function(double floor_at) {
  SpectralFunction f;
  f.value = [floor_at](double x) { return std::max(x, floor_at); };
  f.dd = [floor_at](double a, double b) {
    if (a <= floor_at && b <= floor_at) return 0.0;
    if (a > floor_at && b > floor_at) return 1.0;
    // One side clamped: divided difference of the piecewise-linear function.
    return (std::max(a, floor_at) - std::max(b, floor_at)) / (a - b);
  };
  return f;
}

Eigen::MatrixXd spectral_derivative(const Eigen::VectorXd& evals,
                                    const Eigen::MatrixXd& evecs,
                                    const SpectralFunction& f,
                                    const Eigen::MatrixXd& direction) {
  const int d = static_cast<int>(evals.size());
  const Eigen::MatrixXd e = evecs.transpose() * direction * evecs;
  Eigen::MatrixXd loewner(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double dd =
          (i == j) ? f.dd(evals[i], evals[i]) : f.dd(evals[i], evals[j]);
      loewner(i, j) = dd;
      loewner(j, i) = dd;
    }
  }
  return symmetrize(evecs * loewner.cwiseProduct(e) * evecs.transpose());
}

}  // namespace mfcov
