#ifndef MFCOV_MODELS_HPP
#define MFCOV_MODELS_HPP

/// Data generators: the coupled high/low-fidelity Gaussian model, coupled
/// sample covariance construction, budget-to-sample-count accounting, the
/// exponential-wrapped Gaussian generator on the SPD manifold, and a labeled
/// two-class Gaussian mixture with a coupled low-fidelity observable.

#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mfcov/estimators.hpp"
#include "mfcov/rng.hpp"
#include "mfcov/spd.hpp"
#include "mfcov/tangent.hpp"

namespace mfcov {

/// Draws a d x d matrix with i.i.d. standard normal entries A and returns
/// A^T A (redrawing in the measure-zero event that it fails the SPD check).
SpdMatrix random_wishart(int d, RngStream& rng);

/// Coupled pair of Gaussian observables: X_hi ~ N(0, sigma_hi) and
/// X_lo = X_hi + eps with eps ~ N(0, noise_var * I).
class GaussianCoupledModel {
 public:
  GaussianCoupledModel(SpdMatrix sigma_hi, double noise_var);

  int dim() const { return sigma_hi_.dim(); }
  const SpdMatrix& sigma_hi() const { return sigma_hi_; }
  double noise_var() const { return noise_var_; }
  SpdMatrix sigma_lo() const;

  /// Covariance of the stacked vector (X_hi, X_lo):
  /// [[S, S], [S, S + noise_var I]].
  Eigen::MatrixXd joint_covariance() const;

  /// Draws m coupled pairs; each output matrix holds one draw per column.
  void draw_pairs(int m, RngStream& rng, Eigen::MatrixXd& out_hi,
                  Eigen::MatrixXd& out_lo) const;
  /// Draws m independent high-fidelity vectors (columns).
  Eigen::MatrixXd draw_high_only(int m, RngStream& rng) const;
  /// Draws m independent low-fidelity vectors (columns); marginally
  /// N(0, sigma_hi + noise_var I), realized through the coupling mechanism.
  Eigen::MatrixXd draw_low_only(int m, RngStream& rng) const;

 private:
  SpdMatrix sigma_hi_;
  double noise_var_;
  Eigen::MatrixXd chol_;  // lower Cholesky factor of sigma_hi
};

/// Sample counts bought with a budget B at per-draw costs (c_hi + c_lo for a
/// coupled pair, c_lo for an extra low-fidelity draw).
struct BudgetAllocation {
  double budget = 0.0;
  double cost_hi = 1.0;
  double cost_lo = 1.0;
  int pairs = 0;      // coupled-pair count M1
  int extra_low = 0;  // extra low-fidelity count M2

  double spent() const {
    return pairs * (cost_hi + cost_lo) + extra_low * cost_lo;
  }
  int total_low() const { return pairs + extra_low; }
  void validate() const;  // throws unless M1 >= 2 and spent() <= budget

  /// Splits a budget with coupled fraction rho: M1 = floor(rho B/(c_hi+c_lo)),
  /// M2 = floor((1-rho) B/c_lo). When the fraction would leave fewer than
  /// `min_pairs` coupled pairs, M1 is raised to `min_pairs` and M2 takes
  /// whatever budget remains.
  static BudgetAllocation from_fraction(double budget, double cost_hi,
                                        double cost_lo, double rho,
                                        int min_pairs = 2);
  /// Explicit counts, validated against the budget.
  static BudgetAllocation from_counts(double budget, double cost_hi,
                                      double cost_lo, int pairs,
                                      int extra_low);
  /// Sample count a single-fidelity estimator affords: floor(budget / cost).
  static int single_fidelity_count(double budget, double cost);
};

/// Sample covariances built from one budgeted draw of the coupled model:
/// s_hi over the M1 high draws, s_lo_coupled over their paired low draws,
/// s_lo_extra over the M2 independent low draws (absent when M2 < 2), and
/// s_lo_pooled over all M1 + M2 low draws.
struct CoupledScmDraw {
  ScmResult s_hi;
  ScmResult s_lo_coupled;
  std::optional<ScmResult> s_lo_extra;
  ScmResult s_lo_pooled;
  int pairs = 0;
  int extra_low = 0;
};

CoupledScmDraw draw_coupled_scms(const GaussianCoupledModel& model,
                                 const BudgetAllocation& alloc,
                                 RngStream& rng);

/// Exponential-wrapped Gaussian generator: draws flat E ~ N(0, gamma) in the
/// stacked tangent encoding and returns exp_{base_n}(E_n) per slot. The
/// covariance factor is cached at construction (symmetric PSD square root).
class WrappedGaussianGenerator {
 public:
  WrappedGaussianGenerator(std::vector<SpdMatrix> base,
                           const TangentOperator& gamma);

  int num_slots() const { return static_cast<int>(base_.size()); }
  int dim() const { return base_.front().dim(); }
  const std::vector<SpdMatrix>& base() const { return base_; }

  std::vector<SpdMatrix> draw(RngStream& rng) const;

 private:
  std::vector<SpdMatrix> base_;
  Eigen::MatrixXd factor_;  // (Nq) x (Nq) symmetric PSD square root of gamma
};

/// One-shot convenience wrapper around WrappedGaussianGenerator.
std::vector<SpdMatrix> draw_wrapped_gaussian(const std::vector<SpdMatrix>& base,
                                             const TangentOperator& gamma,
                                             RngStream& rng);

/// One labeled draw from the two-class mixture: the observable, its coupled
/// low-fidelity counterpart y_lo = y + eta, and the class label.
struct LabeledDraw {
  Eigen::VectorXd y;
  Eigen::VectorXd y_lo;
  int label = 0;
};

/// Equal mixture of two Gaussian classes N(m_k, gamma_k) with a coupled
/// low-fidelity observable y_lo = y + eta, eta ~ N(0, noise_cov).
class TwoClassMixture {
 public:
  TwoClassMixture(Eigen::VectorXd mean0, Eigen::VectorXd mean1, SpdMatrix cov0,
                  SpdMatrix cov1, SpdMatrix noise_cov);

  /// Random instance: covariances A^T A / d from standard-normal A, means
  /// m0 = 0 and m1 = mean_gap * u for a random unit vector u, and isotropic
  /// low-fidelity noise of variance noise_var.
  static TwoClassMixture random(int d, double mean_gap, double noise_var,
                                RngStream& rng);

  int dim() const { return static_cast<int>(mean_[0].size()); }
  const Eigen::VectorXd& mean(int cls) const { return mean_[check(cls)]; }
  const SpdMatrix& cov(int cls) const { return cov_[check(cls)]; }
  const SpdMatrix& noise_cov() const { return noise_; }

  /// label ~ Bernoulli(1/2), y | label ~ N(m_label, gamma_label),
  /// y_lo = y + eta.
  LabeledDraw draw(RngStream& rng) const;
  /// Draw with a forced class label (stratified designs).
  LabeledDraw draw_class(int cls, RngStream& rng) const;

 private:
  static int check(int cls);

  Eigen::VectorXd mean_[2];
  SpdMatrix cov_[2];
  SpdMatrix noise_;
  Eigen::MatrixXd chol_[2];
  Eigen::MatrixXd chol_noise_;
};

}  // namespace mfcov

#endif  // MFCOV_MODELS_HPP
