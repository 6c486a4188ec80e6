#pragma once

#include <vector>

#include "mfcov/fidelity.hpp"
#include "mfcov/spd.hpp"
#include "mfcov/tangent.hpp"

namespace mfcov {

/// A pilot ensemble: P independent draws of the full observation stack.
/// draws[p][n] is slot n of draw p, laid out per the structure.
struct PilotEnsemble {
  FidelityStructure structure;
  std::vector<std::vector<SpdMatrix>> draws;

  int count() const { return static_cast<int>(draws.size()); }
  int dim() const {
    return draws.empty() || draws.front().empty() ? 0
                                                  : draws.front().front().dim();
  }
};

/// Intrinsic (Karcher/Frechet) mean of SPD samples under the affine-invariant
/// metric: the fixed point of
///   Sigma <- exp_Sigma( (1/P) sum_p log_Sigma(S_p) ).
/// Initialized at the first sample; converged when the mean tangent satisfies
/// ||T||_F <= tol * ||Sigma||_F.  The mean is unique (nonpositive curvature);
/// non-convergence after max_iter throws with the final residual.
SpdMatrix frechet_mean(const std::vector<SpdMatrix>& samples,
                       double tol = 1e-10, int max_iter = 200);

/// Pooled per-fidelity Frechet means of a pilot ensemble: for each fidelity,
/// the intrinsic mean over all draws and all slots carrying that fidelity.
std::vector<SpdMatrix> pilot_frechet_means(const PilotEnsemble& pilot,
                                           double tol = 1e-10,
                                           int max_iter = 200);

/// Empirical covariance operator of the stack's tangent fluctuations:
///   Gamma_hat = (1/P) sum_p v_p v_p^T,
/// v_p the concatenated flat encodings of log_{means[f(n)]}(S_n^p).
/// Cross-group blocks are zeroed exactly afterwards, enforcing the known
/// independence across groups.  `means` has one entry per fidelity.
TangentOperator estimate_covariance_operator(
    const PilotEnsemble& pilot, const std::vector<SpdMatrix>& means);

/// Squared Mahalanobis distance of a data stack from a candidate mean stack:
///   v^T gamma_inv v,  v = flat stack of log_{sigma[n]}(data[n]).
/// The identity-weighted quadratic form: weighting the metric at the base
/// points and compensating inside the covariance cancel exactly, so this
/// unweighted form is the whole story.
double mahalanobis_sq(const std::vector<SpdMatrix>& data,
                      const std::vector<SpdMatrix>& sigma,
                      const TangentOperator& gamma_inv);

}  // namespace mfcov
