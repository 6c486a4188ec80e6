#include "mfcov/stats.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mfcov {

SpdMatrix frechet_mean(const std::vector<SpdMatrix>& samples, double tol,
                       int max_iter) {
  if (samples.empty()) {
    throw std::invalid_argument("frechet_mean: no samples");
  }
  const int d = samples.front().dim();
  for (const auto& s : samples) {
    if (s.dim() != d) {
      throw std::invalid_argument("frechet_mean: mixed dimensions");
    }
  }
  SpdMatrix mean = samples.front();
  const double inv_p = 1.0 / static_cast<double>(samples.size());
  double residual = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    // Mean tangent at the current iterate.  Work in the whitened frame to
    // share the sqrt factors across samples:
    //   T = R ( (1/P) sum log(R^{-1} S_p R^{-1}) ) R,  R = mean^{1/2}.
    const Eigen::MatrixXd rt = mean.sqrt();
    const Eigen::MatrixXd irt = mean.inv_sqrt();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, d);
    for (const auto& s : samples) {
      const SpdMatrix whitened(symmetrize(irt * s.mat() * irt));
      w += whitened.log();
    }
    w = symmetrize(w * inv_p);
    residual = (rt * w * rt).norm();
    if (residual <= tol * mean.mat().norm()) {
      return mean;
    }
    // exp_mean(T) = R exp(W) R in the same frame.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
    Eigen::VectorXd el(es.eigenvalues().size());
    for (int i = 0; i < el.size(); ++i) el[i] = std::exp(es.eigenvalues()[i]);
    const Eigen::MatrixXd ew =
        es.eigenvectors() * el.asDiagonal() * es.eigenvectors().transpose();
    mean = SpdMatrix(symmetrize(rt * ew * rt));
  }
  throw std::runtime_error(
      "frechet_mean: no convergence after " + std::to_string(max_iter) +
      " iterations (residual " + std::to_string(residual) + ")");
}

std::vector<SpdMatrix> pilot_frechet_means(const PilotEnsemble& pilot,
                                           double tol, int max_iter) {
  std::vector<SpdMatrix> means;
  means.reserve(static_cast<std::size_t>(pilot.structure.num_fidelities()));
  for (int f = 0; f < pilot.structure.num_fidelities(); ++f) {
    const std::vector<int> slots = pilot.structure.slots_with_fidelity(f);
    std::vector<SpdMatrix> pool;
    pool.reserve(pilot.draws.size() * slots.size());
    for (const auto& draw : pilot.draws) {
      for (int n : slots) pool.push_back(draw[static_cast<std::size_t>(n)]);
    }
    means.push_back(frechet_mean(pool, tol, max_iter));
  }
  return means;
}

TangentOperator estimate_covariance_operator(
    const PilotEnsemble& pilot, const std::vector<SpdMatrix>& means) {
  const FidelityStructure& fs = pilot.structure;
  if (static_cast<int>(means.size()) != fs.num_fidelities()) {
    throw std::invalid_argument(
        "estimate_covariance_operator: one mean per fidelity required");
  }
  if (pilot.draws.empty()) {
    throw std::invalid_argument("estimate_covariance_operator: no draws");
  }
  const int n_slots = fs.num_slots();
  const int d = means.front().dim();
  const int q = sym_flat_size(d);

  // Shared sqrt factors of the per-slot base points.
  std::vector<Eigen::MatrixXd> rt(static_cast<std::size_t>(n_slots));
  std::vector<Eigen::MatrixXd> irt(static_cast<std::size_t>(n_slots));
  for (int n = 0; n < n_slots; ++n) {
    const SpdMatrix& m = means[static_cast<std::size_t>(fs.fidelity_of_slot(n))];
    rt[static_cast<std::size_t>(n)] = m.sqrt();
    irt[static_cast<std::size_t>(n)] = m.inv_sqrt();
  }

  TangentOperator gamma = TangentOperator::zero(d, n_slots, n_slots);
  Eigen::VectorXd v(n_slots * q);
  for (const auto& draw : pilot.draws) {
    if (static_cast<int>(draw.size()) != n_slots) {
      throw std::invalid_argument(
          "estimate_covariance_operator: draw does not match structure");
    }
    for (int n = 0; n < n_slots; ++n) {
      const auto& s = draw[static_cast<std::size_t>(n)];
      const SpdMatrix whitened(
          symmetrize(irt[static_cast<std::size_t>(n)] * s.mat() *
                     irt[static_cast<std::size_t>(n)]));
      v.segment(n * q, q) = sym_to_flat(symmetrize(
          rt[static_cast<std::size_t>(n)] * whitened.log() *
          rt[static_cast<std::size_t>(n)]));
    }
    gamma.mat.noalias() += v * v.transpose();
  }
  gamma.mat *= 1.0 / static_cast<double>(pilot.draws.size());
  gamma.mat = symmetrize(gamma.mat);
  zero_cross_group_blocks(gamma, fs);
  return gamma;
}

double mahalanobis_sq(const std::vector<SpdMatrix>& data,
                      const std::vector<SpdMatrix>& sigma,
                      const TangentOperator& gamma_inv) {
  if (data.size() != sigma.size()) {
    throw std::invalid_argument("mahalanobis_sq: stack size mismatch");
  }
  const int n_slots = static_cast<int>(data.size());
  if (!gamma_inv.square() || gamma_inv.rows != n_slots) {
    throw std::invalid_argument(
        "mahalanobis_sq: operator does not match stack");
  }
  const int d = gamma_inv.dim;
  const int q = gamma_inv.q();
  Eigen::VectorXd v(n_slots * q);
  for (int n = 0; n < n_slots; ++n) {
    if (data[static_cast<std::size_t>(n)].dim() != d ||
        sigma[static_cast<std::size_t>(n)].dim() != d) {
      throw std::invalid_argument("mahalanobis_sq: dimension mismatch");
    }
    v.segment(n * q, q) = sym_to_flat(riemannian_log(
        sigma[static_cast<std::size_t>(n)], data[static_cast<std::size_t>(n)]));
  }
  return v.dot(gamma_inv.mat * v);
}

}  // namespace mfcov
