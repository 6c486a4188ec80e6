#pragma once

#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mfcov/fidelity.hpp"
#include "mfcov/spd.hpp"
#include "mfcov/stats.hpp"
#include "mfcov/tangent.hpp"

namespace mfcov {

/// Sample covariance (1/(M-1)) sum (x_m - xbar)(x_m - xbar)^T of the columns
/// of `samples`, with a definiteness verdict: positive_definite iff the
/// smallest eigenvalue exceeds eps_pd = 1e-12 * max(1, largest eigenvalue).
struct ScmResult {
  SymMatrix cov;
  double min_eig = 0.0;
  bool positive_definite = false;

  /// The covariance as a validated SPD matrix; throws when indefinite.
  SpdMatrix spd() const;
};

ScmResult scm(const Eigen::MatrixXd& samples);

/// Euclidean control-variate estimate
///   Sigma_hat = S_hi + alpha (S_ref - S_lo)
/// (scalar gain) or with the operator gain cross * autocov^{-1} applied to
/// the flat encoding of (S_ref - S_lo).  S_ref is the low-noise reference for
/// the low fidelity (a pooled estimate, or the exact mean when known).  The
/// result is symmetric but can be indefinite; the flag reports it.
struct EmfResult {
  SymMatrix estimate;
  double min_eig = 0.0;
  bool positive_definite = false;
};

EmfResult emf(const SpdMatrix& s_hi, const SpdMatrix& s_lo,
              const SpdMatrix& s_ref, double alpha);
EmfResult emf(const SpdMatrix& s_hi, const SpdMatrix& s_lo,
              const SpdMatrix& s_ref, const TangentOperator& cross,
              const TangentOperator& autocov, double eps = 1e-8);

/// Log-Euclidean control-variate estimate: the same correction applied to
/// matrix logarithms,
///   log Sigma_hat = log S_hi + alpha (log S_ref - log S_lo),
/// exponentiated back.  Positive definite by construction.
SpdMatrix lemf(const SpdMatrix& s_hi, const SpdMatrix& s_lo,
               const SpdMatrix& s_ref, double alpha);
SpdMatrix lemf(const SpdMatrix& s_hi, const SpdMatrix& s_lo,
               const SpdMatrix& s_ref, const TangentOperator& cross,
               const TangentOperator& autocov, double eps = 1e-8);

/// Second moments of coupled (hi, lo) covariance estimates, used to form
/// control-variate gains.  `cross` is E[(hi - c_hi) (x) (lo - c_lo)] and
/// `autocov` is E[(lo - c_lo) (x) (lo - c_lo)] on flat encodings; the scalar
/// gain is the trace ratio.
struct CvMoments {
  TangentOperator cross;
  TangentOperator autocov;
  double trace_cross = 0.0;
  double trace_auto = 0.0;

  double scalar_gain() const { return trace_cross / trace_auto; }
};

/// Moments of the raw matrices.  Optional centers override the ensemble
/// Euclidean means (pass the exact means when they are known).
CvMoments euclidean_cv_moments(
    const std::vector<std::pair<SpdMatrix, SpdMatrix>>& pairs,
    const Eigen::MatrixXd* center_hi = nullptr,
    const Eigen::MatrixXd* center_lo = nullptr);

/// Moments of the matrix logarithms.  Optional centers are log-domain
/// matrices (log of the means).
CvMoments log_euclidean_cv_moments(
    const std::vector<std::pair<SpdMatrix, SpdMatrix>>& pairs,
    const Eigen::MatrixXd* center_log_hi = nullptr,
    const Eigen::MatrixXd* center_log_lo = nullptr);

enum class GradientMethod { FiniteDifference, Analytic };

struct SolverSettings {
  double tol = 1e-8;          // converged when ||grad|| <= tol * (1 + |f|)
  int max_iter = 2000;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  // Trial step on the first iteration and whenever the curvature estimate is
  // unusable; afterwards each line search starts from a Barzilai-Borwein
  // step, so this never needs hand-tuning to the problem's stiffness.
  double initial_step = 1.0;
  // The solver's internal gradient; both methods agree to high accuracy and
  // the analytic path is much cheaper per iteration.
  GradientMethod gradient = GradientMethod::Analytic;
};

/// The intrinsic regression problem: minimize over the free fidelity means
///   f(Sigma) = v^T gamma_inv v + sum_l lambda_l ||log(P_l Sigma_l P_l^T)||_F^2
/// where v stacks flat encodings of log_{A_n}(data_n) over the kept slots and
/// A_n = W_n Sigma_{f(n)} W_n^T is the slot mean.  Optimization runs over
/// symmetric square roots B_l (Sigma_l = B_l^2, eigenvalues floored at 1e-12
/// inside the objective), so every candidate is positive semidefinite by
/// construction.
///
/// Slots whose group contains only fixed fidelities drop out of the
/// objective; because the operator is exactly block-diagonal across groups,
/// the corresponding block of gamma_inv is the correct precision of the kept
/// slots.
struct MrmfProblem {
  FidelityStructure structure;
  std::vector<SpdMatrix> data;                  // one per slot
  TangentOperator gamma_inv;                    // full-stack precision
  std::vector<double> lambdas;                  // one per fidelity; empty = 0
  std::map<int, SpdMatrix> fixed;               // fidelity -> pinned value
  std::map<int, SpdMatrix> init;                // optional warm starts
  std::vector<Eigen::MatrixXd> couplings;       // per slot W_n; empty = I
  std::vector<Eigen::MatrixXd> penalty_frames;  // per fidelity P_l; empty = I
  SolverSettings settings;

  explicit MrmfProblem(FidelityStructure s) : structure(std::move(s)) {}

  int dim() const { return data.empty() ? 0 : data.front().dim(); }
  double lambda(int fidelity) const {
    return lambdas.empty() ? 0.0
                           : lambdas.at(static_cast<std::size_t>(fidelity));
  }
  Eigen::MatrixXd coupling(int slot) const {
    return couplings.empty() ? Eigen::MatrixXd::Identity(dim(), dim())
                             : couplings.at(static_cast<std::size_t>(slot));
  }
  Eigen::MatrixXd penalty_frame(int fidelity) const {
    return penalty_frames.empty()
               ? Eigen::MatrixXd::Identity(dim(), dim())
               : penalty_frames.at(static_cast<std::size_t>(fidelity));
  }

  /// Fidelities not pinned by `fixed`, ascending.
  std::vector<int> free_fidelities() const;
  /// Slots whose group contains at least one free fidelity, ascending.
  std::vector<int> kept_slots() const;
  /// Throws std::invalid_argument when fields are inconsistent.
  void validate() const;
};

struct EstimateReport {
  std::map<int, SpdMatrix> estimates;  // all fidelities (fixed passed through)
  double objective = 0.0;              // penalized value at the solution
  double mahalanobis = 0.0;            // unpenalized quadratic at the solution
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;
};

/// Penalized objective at the given square-root iterate (free fidelities).
double mrmf_objective(const MrmfProblem& problem,
                      const std::map<int, SymMatrix>& b);

/// Gradient with respect to the flat coordinates of each free B_l, stacked in
/// ascending fidelity order.  Default is central finite differences with step
/// h = 1e-6 (1 + ||B_l||_F) per fidelity; the analytic path goes through
/// spectral (divided-difference) derivatives of the matrix log/sqrt and
/// matches the stencil to high accuracy.
Eigen::VectorXd mrmf_gradient(
    const MrmfProblem& problem, const std::map<int, SymMatrix>& b,
    GradientMethod method = GradientMethod::FiniteDifference);

/// Gradient descent with Armijo backtracking on the flat square-root
/// coordinates.  Free B_l start at the square root of problem.init[l] when
/// given, otherwise of the first data slot carrying fidelity l.
EstimateReport mrmf_solve(const MrmfProblem& problem);

/// Change of variables that maps every data slot to the identity.
///
/// With Y_n = data_n^{1/2}, all data become I, the precision transforms by
/// the congruence operator, slot couplings pick up the factor that keeps
/// slots of a shared fidelity tied to one free variable, and penalty frames
/// absorb the back-transform so the penalized objective is preserved exactly.
/// Solving the transformed problem and back-transforming equals solving the
/// original problem directly, for every lambda.
struct PreconditionResult {
  MrmfProblem problem;
  // Per free fidelity: Sigma_l = back[l] * Sigma_tilde_l * back[l]^T.
  std::map<int, Eigen::MatrixXd> back;

  std::map<int, SpdMatrix> back_transform(
      const std::map<int, SpdMatrix>& estimates) const;
  EstimateReport back_transform(EstimateReport report) const;
};

PreconditionResult precondition(const MrmfProblem& problem);

/// precondition -> solve -> back-transform.
EstimateReport mrmf_solve_preconditioned(const MrmfProblem& problem);

/// Regularization-weight selection: for each lambda in `grid` (ascending),
/// solve `trials` independently generated problems and average the
/// unpenalized Mahalanobis value at the solution; return the lambda whose
/// average is closest to the tangent dimension d(d+1)/2 (per kept free slot
/// the expected value of the quadratic at the truth), ties toward smaller
/// lambda.  Trials whose solve throws or returns a non-finite value are
/// excluded; a lambda with no valid trials is excluded with a warning on
/// stderr; all lambdas excluded is an error.
struct LambdaTuneResult {
  double lambda = 0.0;
  std::size_t index = 0;
  std::vector<double> mean_mahalanobis;  // per grid point (NaN if excluded)
  std::vector<int> valid_trials;         // per grid point
};

LambdaTuneResult tune_lambda(
    const std::function<MrmfProblem(int trial, double lambda)>& make_problem,
    const std::vector<double>& grid, int trials);

/// Selection rule used by tune_lambda, exposed for direct testing: index of
/// the finite average closest to `target`, ties toward the smaller lambda
/// (earlier index).
std::size_t select_lambda_index(const std::vector<double>& averages,
                                double target);

/// `count` logarithmically spaced values over [lo, hi] inclusive.
std::vector<double> log_spaced(double lo, double hi, int count);

}  // namespace mfcov
