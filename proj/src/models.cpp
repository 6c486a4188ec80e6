#include "mfcov/models.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace mfcov {

SpdMatrix random_wishart(int d, RngStream& rng) {
  if (d < 1) throw std::invalid_argument("random_wishart: d must be positive");
  for (int attempt = 0; attempt < 64; ++attempt) {
    const Eigen::MatrixXd a = rng.normal_matrix(d, d);
    const Eigen::MatrixXd w = symmetrize(a.transpose() * a);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
    const double floor = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
    if (es.eigenvalues().minCoeff() > floor) return SpdMatrix(w);
  }
  throw std::runtime_error("random_wishart: repeated singular draws");
}

GaussianCoupledModel::GaussianCoupledModel(SpdMatrix sigma_hi, double noise_var)
    : sigma_hi_(std::move(sigma_hi)), noise_var_(noise_var) {
  if (!(noise_var_ >= 0.0)) {
    throw std::invalid_argument("GaussianCoupledModel: noise_var must be >= 0");
  }
  chol_ = sigma_hi_.mat().llt().matrixL();
}

SpdMatrix GaussianCoupledModel::sigma_lo() const {
  const int d = dim();
  return SpdMatrix(sigma_hi_.mat() +
                   noise_var_ * Eigen::MatrixXd::Identity(d, d));
}

Eigen::MatrixXd GaussianCoupledModel::joint_covariance() const {
  const int d = dim();
  Eigen::MatrixXd joint(2 * d, 2 * d);
  joint.topLeftCorner(d, d) = sigma_hi_.mat();
  joint.topRightCorner(d, d) = sigma_hi_.mat();
  joint.bottomLeftCorner(d, d) = sigma_hi_.mat();
  joint.bottomRightCorner(d, d) =
      sigma_hi_.mat() + noise_var_ * Eigen::MatrixXd::Identity(d, d);
  return joint;
}

void GaussianCoupledModel::draw_pairs(int m, RngStream& rng,
                                      Eigen::MatrixXd& out_hi,
                                      Eigen::MatrixXd& out_lo) const {
  if (m < 1) throw std::invalid_argument("draw_pairs: m must be positive");
  const int d = dim();
  const double sd = std::sqrt(noise_var_);
  out_hi.resize(d, m);
  out_lo.resize(d, m);
  for (int j = 0; j < m; ++j) {
    out_hi.col(j) = chol_ * rng.normal_vector(d);
    out_lo.col(j) = out_hi.col(j) + sd * rng.normal_vector(d);
  }
}

Eigen::MatrixXd GaussianCoupledModel::draw_high_only(int m,
                                                     RngStream& rng) const {
  if (m < 1) throw std::invalid_argument("draw_high_only: m must be positive");
  const int d = dim();
  Eigen::MatrixXd out(d, m);
  for (int j = 0; j < m; ++j) out.col(j) = chol_ * rng.normal_vector(d);
  return out;
}

Eigen::MatrixXd GaussianCoupledModel::draw_low_only(int m,
                                                    RngStream& rng) const {
  if (m < 1) throw std::invalid_argument("draw_low_only: m must be positive");
  const int d = dim();
  const double sd = std::sqrt(noise_var_);
  Eigen::MatrixXd out(d, m);
  for (int j = 0; j < m; ++j) {
    out.col(j) = chol_ * rng.normal_vector(d) + sd * rng.normal_vector(d);
  }
  return out;
}

void BudgetAllocation::validate() const {
  if (pairs < 2) {
    throw std::invalid_argument("BudgetAllocation: need at least two pairs");
  }
  if (extra_low < 0) {
    throw std::invalid_argument("BudgetAllocation: negative extra_low");
  }
  if (spent() > budget * (1.0 + 1e-12) + 1e-12) {
    throw std::invalid_argument("BudgetAllocation: allocation exceeds budget");
  }
}

namespace {
// floor() with a guard against 89.999999... artifacts in budget arithmetic.
int budget_floor(double x) {
  return static_cast<int>(std::floor(x + 1e-9));
}
}  // namespace

BudgetAllocation BudgetAllocation::from_fraction(double budget, double cost_hi,
                                                 double cost_lo, double rho,
                                                 int min_pairs) {
  if (!(budget > 0.0) || !(cost_hi > 0.0) || !(cost_lo > 0.0)) {
    throw std::invalid_argument("BudgetAllocation: positive budget and costs");
  }
  if (!(rho > 0.0) || !(rho <= 1.0)) {
    throw std::invalid_argument("BudgetAllocation: rho must be in (0, 1]");
  }
  BudgetAllocation a;
  a.budget = budget;
  a.cost_hi = cost_hi;
  a.cost_lo = cost_lo;
  const double pair_cost = cost_hi + cost_lo;
  a.pairs = budget_floor(rho * budget / pair_cost);
  a.extra_low = budget_floor((1.0 - rho) * budget / cost_lo);
  const int needed = std::max(2, min_pairs);
  if (a.pairs < needed) {
    a.pairs = needed;
    a.extra_low =
        std::max(0, budget_floor((budget - a.pairs * pair_cost) / cost_lo));
  }
  a.validate();
  return a;
}

BudgetAllocation BudgetAllocation::from_counts(double budget, double cost_hi,
                                               double cost_lo, int pairs,
                                               int extra_low) {
  BudgetAllocation a;
  a.budget = budget;
  a.cost_hi = cost_hi;
  a.cost_lo = cost_lo;
  a.pairs = pairs;
  a.extra_low = extra_low;
  a.validate();
  return a;
}

int BudgetAllocation::single_fidelity_count(double budget, double cost) {
  if (!(budget > 0.0) || !(cost > 0.0)) {
    throw std::invalid_argument(
        "BudgetAllocation: positive budget and cost required");
  }
  return budget_floor(budget / cost);
}

CoupledScmDraw draw_coupled_scms(const GaussianCoupledModel& model,
                                 const BudgetAllocation& alloc,
                                 RngStream& rng) {
  alloc.validate();
  CoupledScmDraw out;
  out.pairs = alloc.pairs;
  out.extra_low = alloc.extra_low;

  Eigen::MatrixXd hi;
  Eigen::MatrixXd lo;
  model.draw_pairs(alloc.pairs, rng, hi, lo);
  out.s_hi = scm(hi);
  out.s_lo_coupled = scm(lo);

  if (alloc.extra_low > 0) {
    const Eigen::MatrixXd extra = model.draw_low_only(alloc.extra_low, rng);
    Eigen::MatrixXd all_lo(model.dim(), alloc.pairs + alloc.extra_low);
    all_lo.leftCols(alloc.pairs) = lo;
    all_lo.rightCols(alloc.extra_low) = extra;
    if (alloc.extra_low >= 2) out.s_lo_extra = scm(extra);
    out.s_lo_pooled = scm(all_lo);
  } else {
    out.s_lo_pooled = out.s_lo_coupled;
  }
  return out;
}

WrappedGaussianGenerator::WrappedGaussianGenerator(std::vector<SpdMatrix> base,
                                                   const TangentOperator& gamma)
    : base_(std::move(base)) {
  if (base_.empty()) {
    throw std::invalid_argument("WrappedGaussianGenerator: empty base stack");
  }
  const int d = base_.front().dim();
  for (const auto& b : base_) {
    if (b.dim() != d) {
      throw std::invalid_argument(
          "WrappedGaussianGenerator: mixed base dimensions");
    }
  }
  const int n = static_cast<int>(base_.size());
  if (gamma.dim != d || gamma.rows != n || gamma.cols != n) {
    throw std::invalid_argument(
        "WrappedGaussianGenerator: gamma does not match the base stack");
  }
  if (gamma.asymmetry() > 1e-10 * std::max(1.0, gamma.mat.norm())) {
    throw std::invalid_argument("WrappedGaussianGenerator: gamma not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(gamma.mat));
  if (es.info() != Eigen::Success) {
    throw std::runtime_error(
        "WrappedGaussianGenerator: covariance factorization failed");
  }
  const double max_ev = es.eigenvalues().cwiseAbs().maxCoeff();
  Eigen::VectorXd root(es.eigenvalues().size());
  for (int i = 0; i < root.size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < -1e-10 * std::max(1.0, max_ev)) {
      throw std::invalid_argument(
          "WrappedGaussianGenerator: gamma is not positive semidefinite");
    }
    root[i] = std::sqrt(std::max(ev, 0.0));
  }
  factor_ = symmetrize(es.eigenvectors() * root.asDiagonal() *
                       es.eigenvectors().transpose());
}

std::vector<SpdMatrix> WrappedGaussianGenerator::draw(RngStream& rng) const {
  const int d = dim();
  const int q = sym_flat_size(d);
  const Eigen::VectorXd z =
      rng.normal_vector(static_cast<int>(factor_.rows()));
  const Eigen::VectorXd e = factor_ * z;
  std::vector<SpdMatrix> out;
  out.reserve(base_.size());
  for (std::size_t n = 0; n < base_.size(); ++n) {
    const Eigen::MatrixXd tangent =
        flat_to_sym(e.segment(static_cast<Eigen::Index>(n) * q, q), d);
    out.push_back(riemannian_exp(base_[n], SymMatrix(tangent)));
  }
  return out;
}

std::vector<SpdMatrix> draw_wrapped_gaussian(const std::vector<SpdMatrix>& base,
                                             const TangentOperator& gamma,
                                             RngStream& rng) {
  return WrappedGaussianGenerator(base, gamma).draw(rng);
}

TwoClassMixture::TwoClassMixture(Eigen::VectorXd mean0, Eigen::VectorXd mean1,
                                 SpdMatrix cov0, SpdMatrix cov1,
                                 SpdMatrix noise_cov)
    : mean_{std::move(mean0), std::move(mean1)},
      cov_{std::move(cov0), std::move(cov1)},
      noise_(std::move(noise_cov)) {
  const int d = static_cast<int>(mean_[0].size());
  if (mean_[1].size() != d || cov_[0].dim() != d || cov_[1].dim() != d ||
      noise_.dim() != d) {
    throw std::invalid_argument("TwoClassMixture: dimension mismatch");
  }
  chol_[0] = cov_[0].mat().llt().matrixL();
  chol_[1] = cov_[1].mat().llt().matrixL();
  chol_noise_ = noise_.mat().llt().matrixL();
}

TwoClassMixture TwoClassMixture::random(int d, double mean_gap,
                                        double noise_var, RngStream& rng) {
  if (d < 1) throw std::invalid_argument("TwoClassMixture: d must be positive");
  if (!(noise_var > 0.0)) {
    throw std::invalid_argument("TwoClassMixture: noise_var must be > 0");
  }
  const SpdMatrix g0(random_wishart(d, rng).mat() / static_cast<double>(d));
  const SpdMatrix g1(random_wishart(d, rng).mat() / static_cast<double>(d));
  Eigen::VectorXd gap = rng.normal_vector(d);
  gap *= mean_gap / gap.norm();
  return TwoClassMixture(
      Eigen::VectorXd::Zero(d), gap, g0, g1,
      SpdMatrix(noise_var * Eigen::MatrixXd::Identity(d, d)));
}

int TwoClassMixture::check(int cls) {
  if (cls != 0 && cls != 1) {
    throw std::invalid_argument("TwoClassMixture: class must be 0 or 1");
  }
  return cls;
}

LabeledDraw TwoClassMixture::draw(RngStream& rng) const {
  const int cls = rng.uniform() < 0.5 ? 0 : 1;
  return draw_class(cls, rng);
}

LabeledDraw TwoClassMixture::draw_class(int cls, RngStream& rng) const {
  check(cls);
  LabeledDraw out;
  out.label = cls;
  out.y = mean_[cls] + chol_[cls] * rng.normal_vector(dim());
  out.y_lo = out.y + chol_noise_ * rng.normal_vector(dim());
  return out;
}

}  // namespace mfcov
