#include "mfcov/estimators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <limits>
#include <utility>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace mfcov {

namespace {

constexpr double kEvalFloor = 1e-12;  // eigenvalue floor inside the objective

Eigen::MatrixXd sym_exp(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(m));
  Eigen::VectorXd el(es.eigenvalues().size());
  for (int i = 0; i < el.size(); ++i) el[i] = std::exp(es.eigenvalues()[i]);
  return symmetrize(es.eigenvectors() * el.asDiagonal() *
                    es.eigenvectors().transpose());
}

bool is_identity(const Eigen::MatrixXd& m) {
  return (m - Eigen::MatrixXd::Identity(m.rows(), m.cols())).norm() == 0.0;
}

}  // namespace

SpdMatrix ScmResult::spd() const {
  if (!positive_definite) {
    throw std::runtime_error("ScmResult: covariance is not positive definite");
  }
  return SpdMatrix(cov.mat());
}

ScmResult scm(const Eigen::MatrixXd& samples) {
  const Eigen::Index d = samples.rows();
  const Eigen::Index m = samples.cols();
  if (d < 1 || m < 2) {
    throw std::invalid_argument("scm: need at least two samples");
  }
  const Eigen::VectorXd mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - mean;
  const Eigen::MatrixXd cov = symmetrize(
      (centered * centered.transpose()) / static_cast<double>(m - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  ScmResult out;
  out.cov = SymMatrix(cov);
  out.min_eig = es.eigenvalues().minCoeff();
  const double eps_pd = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
  out.positive_definite = out.min_eig > eps_pd;
  return out;
}

namespace {

EmfResult finish_emf(const Eigen::MatrixXd& estimate) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(estimate));
  EmfResult out;
  out.estimate = SymMatrix(symmetrize(estimate));
  out.min_eig = es.eigenvalues().minCoeff();
  const double eps_pd = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
  out.positive_definite = out.min_eig > eps_pd;
  return out;
}

}  // namespace

EmfResult emf(const SpdMatrix& s_hi, const SpdMatrix& s_lo,
              const SpdMatrix& s_ref, double alpha) {
  if (s_hi.dim() != s_lo.dim() || s_hi.dim() != s_ref.dim()) {
    throw std::invalid_argument("emf: dimension mismatch");
  }
  return finish_emf(s_hi.mat() + alpha * (s_ref.mat() - s_lo.mat()));
}

EmfResult emf(const SpdMatrix& s_hi, const SpdMatrix& s_lo,
              const SpdMatrix& s_ref, const TangentOperator& cross,
              const TangentOperator& autocov, double eps) {
  const int d = s_hi.dim();
  if (cross.dim != d || autocov.dim != d || cross.rows != 1 ||
      cross.cols != 1 || autocov.rows != 1 || autocov.cols != 1) {
    throw std::invalid_argument("emf: gain operators must be single-slot");
  }
  const Eigen::VectorXd diff = sym_to_flat(s_ref.mat() - s_lo.mat());
  const TangentOperator ainv = regularized_inverse(autocov, eps);
  const Eigen::VectorXd corr = cross.mat * (ainv.mat * diff);
  return finish_emf(s_hi.mat() + flat_to_sym(corr, d));
}

SpdMatrix lemf(const SpdMatrix& s_hi, const SpdMatrix& s_lo,
               const SpdMatrix& s_ref, double alpha) {
  if (s_hi.dim() != s_lo.dim() || s_hi.dim() != s_ref.dim()) {
    throw std::invalid_argument("lemf: dimension mismatch");
  }
  return SpdMatrix(
      sym_exp(s_hi.log() + alpha * (s_ref.log() - s_lo.log())));
}

SpdMatrix lemf(const SpdMatrix& s_hi, const SpdMatrix& s_lo,
               const SpdMatrix& s_ref, const TangentOperator& cross,
               const TangentOperator& autocov, double eps) {
  const int d = s_hi.dim();
  if (cross.dim != d || autocov.dim != d || cross.rows != 1 ||
      cross.cols != 1 || autocov.rows != 1 || autocov.cols != 1) {
    throw std::invalid_argument("lemf: gain operators must be single-slot");
  }
  const Eigen::VectorXd diff = sym_to_flat(s_ref.log() - s_lo.log());
  const TangentOperator ainv = regularized_inverse(autocov, eps);
  const Eigen::VectorXd corr = cross.mat * (ainv.mat * diff);
  return SpdMatrix(sym_exp(s_hi.log() + flat_to_sym(corr, d)));
}

namespace {

CvMoments moments_from_encodings(const std::vector<Eigen::VectorXd>& hi,
                                 const std::vector<Eigen::VectorXd>& lo,
                                 int d) {
  const int q = sym_flat_size(d);
  CvMoments m;
  m.cross = TangentOperator::zero(d, 1, 1);
  m.autocov = TangentOperator::zero(d, 1, 1);
  const double inv_p = 1.0 / static_cast<double>(hi.size());
  for (std::size_t p = 0; p < hi.size(); ++p) {
    m.cross.mat.noalias() += hi[p] * lo[p].transpose();
    m.autocov.mat.noalias() += lo[p] * lo[p].transpose();
  }
  m.cross.mat *= inv_p;
  m.autocov.mat = symmetrize(m.autocov.mat * inv_p);
  m.trace_cross = m.cross.mat.trace();
  m.trace_auto = m.autocov.mat.trace();
  (void)q;
  return m;
}

}  // namespace

CvMoments euclidean_cv_moments(
    const std::vector<std::pair<SpdMatrix, SpdMatrix>>& pairs,
    const Eigen::MatrixXd* center_hi, const Eigen::MatrixXd* center_lo) {
  if (pairs.empty()) {
    throw std::invalid_argument("euclidean_cv_moments: no pairs");
  }
  const int d = pairs.front().first.dim();
  Eigen::MatrixXd ch = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd cl = Eigen::MatrixXd::Zero(d, d);
  if (center_hi != nullptr && center_lo != nullptr) {
    ch = *center_hi;
    cl = *center_lo;
  } else {
    for (const auto& [sh, sl] : pairs) {
      ch += sh.mat();
      cl += sl.mat();
    }
    ch /= static_cast<double>(pairs.size());
    cl /= static_cast<double>(pairs.size());
  }
  std::vector<Eigen::VectorXd> hi;
  std::vector<Eigen::VectorXd> lo;
  hi.reserve(pairs.size());
  lo.reserve(pairs.size());
  for (const auto& [sh, sl] : pairs) {
    hi.push_back(sym_to_flat(sh.mat() - ch));
    lo.push_back(sym_to_flat(sl.mat() - cl));
  }
  return moments_from_encodings(hi, lo, d);
}

CvMoments log_euclidean_cv_moments(
    const std::vector<std::pair<SpdMatrix, SpdMatrix>>& pairs,
    const Eigen::MatrixXd* center_log_hi,
    const Eigen::MatrixXd* center_log_lo) {
  if (pairs.empty()) {
    throw std::invalid_argument("log_euclidean_cv_moments: no pairs");
  }
  const int d = pairs.front().first.dim();
  std::vector<Eigen::MatrixXd> log_hi;
  std::vector<Eigen::MatrixXd> log_lo;
  log_hi.reserve(pairs.size());
  log_lo.reserve(pairs.size());
  for (const auto& [sh, sl] : pairs) {
    log_hi.push_back(sh.log());
    log_lo.push_back(sl.log());
  }
  Eigen::MatrixXd ch = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd cl = Eigen::MatrixXd::Zero(d, d);
  if (center_log_hi != nullptr && center_log_lo != nullptr) {
    ch = *center_log_hi;
    cl = *center_log_lo;
  } else {
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      ch += log_hi[p];
      cl += log_lo[p];
    }
    ch /= static_cast<double>(pairs.size());
    cl /= static_cast<double>(pairs.size());
  }
  std::vector<Eigen::VectorXd> hi;
  std::vector<Eigen::VectorXd> lo;
  hi.reserve(pairs.size());
  lo.reserve(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    hi.push_back(sym_to_flat(log_hi[p] - ch));
    lo.push_back(sym_to_flat(log_lo[p] - cl));
  }
  return moments_from_encodings(hi, lo, d);
}

std::vector<int> MrmfProblem::free_fidelities() const {
  std::vector<int> out;
  for (int f = 0; f < structure.num_fidelities(); ++f) {
    if (fixed.find(f) == fixed.end()) out.push_back(f);
  }
  return out;
}

std::vector<int> MrmfProblem::kept_slots() const {
  std::vector<int> out;
  for (int n = 0; n < structure.num_slots(); ++n) {
    const auto& group = structure.groups()[static_cast<std::size_t>(
        structure.group_of_slot(n))];
    const bool has_free = std::any_of(group.begin(), group.end(), [&](int f) {
      return fixed.find(f) == fixed.end();
    });
    if (has_free) out.push_back(n);
  }
  return out;
}

void MrmfProblem::validate() const {
  const int n_slots = structure.num_slots();
  if (static_cast<int>(data.size()) != n_slots) {
    throw std::invalid_argument("MrmfProblem: one data matrix per slot");
  }
  const int d = dim();
  for (const auto& s : data) {
    if (s.dim() != d) {
      throw std::invalid_argument("MrmfProblem: mixed data dimensions");
    }
  }
  if (!gamma_inv.square() || gamma_inv.rows != n_slots || gamma_inv.dim != d) {
    throw std::invalid_argument(
        "MrmfProblem: gamma_inv does not match the slot layout");
  }
  if (!lambdas.empty()) {
    if (static_cast<int>(lambdas.size()) != structure.num_fidelities()) {
      throw std::invalid_argument("MrmfProblem: one lambda per fidelity");
    }
    for (double l : lambdas) {
      if (!(l >= 0.0)) {
        throw std::invalid_argument("MrmfProblem: lambdas must be >= 0");
      }
    }
  }
  for (const auto& [f, m] : fixed) {
    if (f < 0 || f >= structure.num_fidelities()) {
      throw std::invalid_argument("MrmfProblem: fixed fidelity out of range");
    }
    if (m.dim() != d) {
      throw std::invalid_argument("MrmfProblem: fixed value dimension mismatch");
    }
  }
  if (free_fidelities().empty()) {
    throw std::invalid_argument("MrmfProblem: no free fidelities to estimate");
  }
  if (!couplings.empty()) {
    if (static_cast<int>(couplings.size()) != n_slots) {
      throw std::invalid_argument("MrmfProblem: one coupling per slot");
    }
    for (const auto& w : couplings) {
      if (w.rows() != d || w.cols() != d) {
        throw std::invalid_argument("MrmfProblem: coupling size mismatch");
      }
      if (std::abs(w.determinant()) < 1e-300) {
        throw std::invalid_argument("MrmfProblem: coupling is singular");
      }
    }
  }
  if (!penalty_frames.empty()) {
    if (static_cast<int>(penalty_frames.size()) != structure.num_fidelities()) {
      throw std::invalid_argument("MrmfProblem: one penalty frame per fidelity");
    }
    for (const auto& fmat : penalty_frames) {
      if (fmat.rows() != d || fmat.cols() != d) {
        throw std::invalid_argument("MrmfProblem: penalty frame size mismatch");
      }
      if (std::abs(fmat.determinant()) < 1e-300) {
        throw std::invalid_argument("MrmfProblem: penalty frame is singular");
      }
    }
  }
  for (const auto& [f, m] : init) {
    if (f < 0 || f >= structure.num_fidelities()) {
      throw std::invalid_argument("MrmfProblem: init fidelity out of range");
    }
    if (m.dim() != d) {
      throw std::invalid_argument("MrmfProblem: init dimension mismatch");
    }
  }
}

namespace {

/// Shared state for objective/gradient evaluation at one iterate.
class ObjectiveWorkspace {
 public:
  explicit ObjectiveWorkspace(const MrmfProblem& p) : p_(p) {
    p_.validate();
    d_ = p_.dim();
    q_ = sym_flat_size(d_);
    free_ = p_.free_fidelities();
    for (std::size_t i = 0; i < free_.size(); ++i) {
      free_index_[free_[i]] = static_cast<int>(i);
    }
    kept_ = p_.kept_slots();
    ginv_ = extract_block(p_.gamma_inv, kept_, kept_);

    slots_.reserve(kept_.size());
    for (int n : kept_) {
      Slot s;
      s.slot = n;
      s.fidelity = p_.structure.fidelity_of_slot(n);
      s.w = p_.coupling(n);
      s.w_identity = is_identity(s.w);
      s.free = free_index_.count(s.fidelity) > 0;
      if (!s.free) {
        // Constant tangent of a pinned fidelity's slot.
        const SpdMatrix& val = p_.fixed.at(s.fidelity);
        const SpdMatrix mean(
            symmetrize(s.w * val.mat() * s.w.transpose()));
        s.t_fixed = sym_to_flat(
            riemannian_log(mean, p_.data[static_cast<std::size_t>(n)]));
      }
      slots_.push_back(std::move(s));
    }

    log_fn_ = log_spectral_function(0.0);
    sqrt_fn_ = sqrt_spectral_function();
    floor_fn_ = floor_spectral_function(kEvalFloor);
  }

  int num_free() const { return static_cast<int>(free_.size()); }
  int num_vars() const { return num_free() * q_; }
  const std::vector<int>& free_fidelities() const { return free_; }

  Eigen::VectorXd initial_point() const {
    Eigen::VectorXd x(num_vars());
    for (std::size_t i = 0; i < free_.size(); ++i) {
      const int f = free_[i];
      const auto it = p_.init.find(f);
      const SpdMatrix& start =
          (it != p_.init.end())
              ? it->second
              : p_.data[static_cast<std::size_t>(p_.structure.primary_slot(f))];
      x.segment(static_cast<Eigen::Index>(i) * q_, q_) =
          sym_to_flat(start.sqrt());
    }
    return x;
  }

  std::map<int, SymMatrix> unpack(const Eigen::VectorXd& x) const {
    std::map<int, SymMatrix> b;
    for (std::size_t i = 0; i < free_.size(); ++i) {
      b.emplace(free_[i],
                SymMatrix(flat_to_sym(
                    x.segment(static_cast<Eigen::Index>(i) * q_, q_), d_)));
    }
    return b;
  }

  Eigen::VectorXd pack(const std::map<int, SymMatrix>& b) const {
    Eigen::VectorXd x(num_vars());
    for (std::size_t i = 0; i < free_.size(); ++i) {
      x.segment(static_cast<Eigen::Index>(i) * q_, q_) =
          sym_to_flat(b.at(free_[i]));
    }
    return x;
  }

  /// Objective value; +inf when the candidate is numerically unusable.
  /// When `grad` is non-null, also computes the analytic gradient.
  double evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad,
                  double* mahalanobis_out = nullptr) {
    const double inf = std::numeric_limits<double>::infinity();
    // --- per-fidelity square roots and floored squares ---
    struct FidState {
      Eigen::MatrixXd b;
      Eigen::VectorXd b_evals;
      Eigen::MatrixXd b_evecs;
      Eigen::VectorXd b2_evals;   // raw squares
      Eigen::VectorXd sig_evals;  // floored
      Eigen::MatrixXd sigma;
      double penalty = 0.0;
      Eigen::MatrixXd pen_cotangent;  // d(penalty)/d(sigma)
    };
    std::vector<FidState> fid(free_.size());
    double penalty_total = 0.0;
    for (std::size_t i = 0; i < free_.size(); ++i) {
      FidState& fs = fid[i];
      fs.b = flat_to_sym(x.segment(static_cast<Eigen::Index>(i) * q_, q_), d_);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fs.b);
      if (es.info() != Eigen::Success) return inf;
      fs.b_evals = es.eigenvalues();
      fs.b_evecs = es.eigenvectors();
      fs.b2_evals = fs.b_evals.cwiseProduct(fs.b_evals);
      fs.sig_evals = fs.b2_evals.cwiseMax(kEvalFloor);
      fs.sigma = symmetrize(fs.b_evecs * fs.sig_evals.asDiagonal() *
                            fs.b_evecs.transpose());
      const double lam = p_.lambda(free_[i]);
      if (lam > 0.0) {
        const Eigen::MatrixXd frame = p_.penalty_frame(free_[i]);
        if (is_identity(frame)) {
          // log(Sigma) shares Sigma's eigenvectors.
          double s = 0.0;
          Eigen::VectorXd k(d_);
          for (int j = 0; j < d_; ++j) {
            const double lg = std::log(fs.sig_evals[j]);
            s += lg * lg;
            k[j] = lg / fs.sig_evals[j];
          }
          fs.penalty = lam * s;
          if (grad != nullptr) {
            fs.pen_cotangent =
                2.0 * lam *
                symmetrize(fs.b_evecs * k.asDiagonal() * fs.b_evecs.transpose());
          }
        } else {
          const Eigen::MatrixXd m =
              symmetrize(frame * fs.sigma * frame.transpose());
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m);
          if (em.info() != Eigen::Success ||
              em.eigenvalues().minCoeff() <= 0.0) {
            return inf;
          }
          double s = 0.0;
          Eigen::VectorXd k(d_);
          for (int j = 0; j < d_; ++j) {
            const double lg = std::log(em.eigenvalues()[j]);
            s += lg * lg;
            k[j] = lg / em.eigenvalues()[j];
          }
          fs.penalty = lam * s;
          if (grad != nullptr) {
            const Eigen::MatrixXd dlog = symmetrize(
                em.eigenvectors() * k.asDiagonal() * em.eigenvectors().transpose());
            fs.pen_cotangent =
                2.0 * lam * symmetrize(frame.transpose() * dlog * frame);
          }
        }
      } else {
        fs.penalty = 0.0;
        if (grad != nullptr) {
          fs.pen_cotangent = Eigen::MatrixXd::Zero(d_, d_);
        }
      }
      penalty_total += fs.penalty;
    }

    // --- per-slot tangents ---
    struct SlotState {
      Eigen::VectorXd a_evals;
      Eigen::MatrixXd a_evecs;
      Eigen::MatrixXd r, ir, c, logc;
    };
    std::vector<SlotState> ss(slots_.size());
    Eigen::VectorXd v(static_cast<Eigen::Index>(slots_.size()) * q_);
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      const Slot& s = slots_[k];
      if (!s.free) {
        v.segment(static_cast<Eigen::Index>(k) * q_, q_) = s.t_fixed;
        continue;
      }
      const FidState& fs =
          fid[static_cast<std::size_t>(free_index_.at(s.fidelity))];
      SlotState& st = ss[k];
      if (s.w_identity) {
        st.a_evals = fs.sig_evals;
        st.a_evecs = fs.b_evecs;
      } else {
        const Eigen::MatrixXd a =
            symmetrize(s.w * fs.sigma * s.w.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
        if (ea.info() != Eigen::Success ||
            ea.eigenvalues().minCoeff() <= 0.0) {
          return inf;
        }
        st.a_evals = ea.eigenvalues();
        st.a_evecs = ea.eigenvectors();
      }
      Eigen::VectorXd rt(d_);
      Eigen::VectorXd irt(d_);
      for (int j = 0; j < d_; ++j) {
        rt[j] = std::sqrt(st.a_evals[j]);
        irt[j] = 1.0 / rt[j];
      }
      st.r = symmetrize(st.a_evecs * rt.asDiagonal() * st.a_evecs.transpose());
      st.ir =
          symmetrize(st.a_evecs * irt.asDiagonal() * st.a_evecs.transpose());
      st.c = symmetrize(
          st.ir * p_.data[static_cast<std::size_t>(s.slot)].mat() * st.ir);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ec(st.c);
      if (ec.info() != Eigen::Success || ec.eigenvalues().minCoeff() <= 0.0) {
        return inf;
      }
      Eigen::VectorXd lg(d_);
      for (int j = 0; j < d_; ++j) lg[j] = std::log(ec.eigenvalues()[j]);
      st.logc = symmetrize(ec.eigenvectors() * lg.asDiagonal() *
                           ec.eigenvectors().transpose());
      // Cache C's eigensystem for the gradient.
      c_evals_[k] = ec.eigenvalues();
      c_evecs_[k] = ec.eigenvectors();
      v.segment(static_cast<Eigen::Index>(k) * q_, q_) =
          sym_to_flat(symmetrize(st.r * st.logc * st.r));
    }

    const Eigen::VectorXd gv = ginv_.mat * v;
    const double maha = v.dot(gv);
    if (mahalanobis_out != nullptr) *mahalanobis_out = maha;
    const double f = maha + penalty_total;
    if (grad == nullptr) return f;

    // --- reverse pass ---
    grad->setZero(num_vars());
    std::vector<Eigen::MatrixXd> g_sigma(
        free_.size(), Eigen::MatrixXd::Zero(d_, d_));
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      const Slot& s = slots_[k];
      if (!s.free) continue;
      const SlotState& st = ss[k];
      const Eigen::MatrixXd u =
          flat_to_sym(2.0 * gv.segment(static_cast<Eigen::Index>(k) * q_, q_),
                      d_);
      const Eigen::MatrixXd rur = symmetrize(st.r * u * st.r);
      const Eigen::MatrixXd pmat =
          spectral_derivative(c_evals_[k], c_evecs_[k], log_fn_, rur);
      const Eigen::MatrixXd psi_r =
          symmetrize(u * st.r * st.logc + st.logc * st.r * u -
                     st.ir * pmat * st.c - st.c * pmat * st.ir);
      const Eigen::MatrixXd psi_a =
          spectral_derivative(st.a_evals, st.a_evecs, sqrt_fn_, psi_r);
      const std::size_t fi =
          static_cast<std::size_t>(free_index_.at(s.fidelity));
      if (s.w_identity) {
        g_sigma[fi] += psi_a;
      } else {
        g_sigma[fi] += symmetrize(s.w.transpose() * psi_a * s.w);
      }
    }
    for (std::size_t i = 0; i < free_.size(); ++i) {
      const FidState& fs = fid[i];
      const Eigen::MatrixXd g_total = g_sigma[i] + fs.pen_cotangent;
      const Eigen::MatrixXd pulled = spectral_derivative(
          fs.b2_evals, fs.b_evecs, floor_fn_, g_total);
      const Eigen::MatrixXd gb = symmetrize(fs.b * pulled + pulled * fs.b);
      grad->segment(static_cast<Eigen::Index>(i) * q_, q_) = sym_to_flat(gb);
    }
    return f;
  }

  /// Central finite-difference gradient with per-fidelity step
  /// h = 1e-6 (1 + ||B_l||_F).
  Eigen::VectorXd fd_gradient(const Eigen::VectorXd& x) {
    Eigen::VectorXd g(num_vars());
    for (std::size_t i = 0; i < free_.size(); ++i) {
      const double bnorm =
          x.segment(static_cast<Eigen::Index>(i) * q_, q_).norm();
      const double h = 1e-6 * (1.0 + bnorm);
      for (int j = 0; j < q_; ++j) {
        const Eigen::Index idx = static_cast<Eigen::Index>(i) * q_ + j;
        Eigen::VectorXd xp = x;
        Eigen::VectorXd xm = x;
        xp[idx] += h;
        xm[idx] -= h;
        const double fp = evaluate(xp, nullptr);
        const double fm = evaluate(xm, nullptr);
        g[idx] = (fp - fm) / (2.0 * h);
      }
    }
    return g;
  }

 private:
  struct Slot {
    int slot = 0;
    int fidelity = 0;
    bool free = false;
    bool w_identity = true;
    Eigen::MatrixXd w;
    Eigen::VectorXd t_fixed;
  };

  const MrmfProblem& p_;
  int d_ = 0;
  int q_ = 0;
  std::vector<int> free_;
  std::map<int, int> free_index_;
  std::vector<int> kept_;
  TangentOperator ginv_;
  std::vector<Slot> slots_;
  std::map<std::size_t, Eigen::VectorXd> c_evals_;
  std::map<std::size_t, Eigen::MatrixXd> c_evecs_;
  SpectralFunction log_fn_, sqrt_fn_, floor_fn_;
};

}  // namespace

double mrmf_objective(const MrmfProblem& problem,
                      const std::map<int, SymMatrix>& b) {
  ObjectiveWorkspace w(problem);
  return w.evaluate(w.pack(b), nullptr);
}

Eigen::VectorXd mrmf_gradient(const MrmfProblem& problem,
                              const std::map<int, SymMatrix>& b,
                              GradientMethod method) {
  ObjectiveWorkspace w(problem);
  const Eigen::VectorXd x = w.pack(b);
  if (method == GradientMethod::FiniteDifference) {
    return w.fd_gradient(x);
  }
  Eigen::VectorXd g;
  w.evaluate(x, &g);
  return g;
}

EstimateReport mrmf_solve(const MrmfProblem& problem) {
  ObjectiveWorkspace w(problem);
  const SolverSettings& s = problem.settings;
  Eigen::VectorXd x = w.initial_point();
  Eigen::VectorXd grad(w.num_vars());
  double maha = 0.0;
  double f;
  if (s.gradient == GradientMethod::Analytic) {
    f = w.evaluate(x, &grad, &maha);
  } else {
    f = w.evaluate(x, nullptr, &maha);
    grad = w.fd_gradient(x);
  }
  if (!std::isfinite(f)) {
    throw std::runtime_error("mrmf_solve: objective not finite at start");
  }

  EstimateReport report;

  // Descent with Barzilai-Borwein steps under a nonmonotone Armijo test:
  // the trial step carries the most recent curvature estimate s's/s'y, and
  // acceptance compares against the worst of the last few objective values,
  // which keeps the long BB steps that make stiff quadratics tractable.
  // Because individual iterations may go uphill, the best iterate seen is
  // tracked and reported.
  Eigen::VectorXd x_best = x;
  Eigen::VectorXd g_best = grad;
  double f_best = f;
  double maha_best = maha;

  constexpr int kAcceptMemory = 8;
  std::array<double, kAcceptMemory> recent;
  recent.fill(f);

  // Progress floor: decreases below floating-point significance cannot
  // accumulate into real progress, so stop once a whole window of
  // iterations improves the best objective by less than the window's
  // worth of rounding noise.
  constexpr int kProgressWindow = 64;
  const double eps = std::numeric_limits<double>::epsilon();
  double window_ref = f_best;
  int window_count = 0;

  double step_init = s.initial_step;
  int it = 0;
  bool converged = false;
  for (; it < s.max_iter; ++it) {
    const double gnorm = grad.norm();
    if (gnorm <= s.tol * (1.0 + std::abs(f))) {
      converged = true;
      break;
    }
    const double g2 = grad.squaredNorm();
    const double f_ref = *std::max_element(recent.begin(), recent.end());
    // Trust cap: never open the line search with a displacement beyond the
    // iterate's own scale.  A very steep first gradient would otherwise fling
    // the trial point across the parametrization's singular set, where
    // descent can take an accepted but terrible long jump.
    double step = std::min(step_init, (1.0 + x.norm()) / gnorm);
    bool accepted = false;
    Eigen::VectorXd xn;
    double fn = 0.0;
    while (step >= 1e-18) {
      xn = x - step * grad;
      fn = w.evaluate(xn, nullptr);
      if (std::isfinite(fn) && fn <= f_ref - s.armijo_c * step * g2) {
        accepted = true;
        break;
      }
      step *= s.backtrack;
    }
    if (!accepted) break;  // no acceptable step at any scale

    Eigen::VectorXd g_new(w.num_vars());
    double f_new;
    if (s.gradient == GradientMethod::Analytic) {
      f_new = w.evaluate(xn, &g_new, &maha);
    } else {
      f_new = w.evaluate(xn, nullptr, &maha);
      g_new = w.fd_gradient(xn);
    }

    // BB1 curvature step for the next line search; fall back to the
    // configured step whenever the curvature pair is unusable.
    const Eigen::VectorXd y_vec = g_new - grad;
    const double sy = -step * grad.dot(y_vec);
    if (std::isfinite(sy) && sy > 0.0) {
      step_init = std::clamp(step * step * g2 / sy, 1e-10, 1e6);
    } else {
      step_init = s.initial_step;
    }

    x = std::move(xn);
    f = f_new;
    grad = std::move(g_new);
    recent[static_cast<std::size_t>(it % kAcceptMemory)] = f;
    if (f < f_best) {
      x_best = x;
      g_best = grad;
      f_best = f;
      maha_best = maha;
    }
    if (++window_count >= kProgressWindow) {
      if (window_ref - f_best <=
          kProgressWindow * 8.0 * eps * (1.0 + std::abs(f_best))) {
        break;
      }
      window_ref = f_best;
      window_count = 0;
    }
  }

  if (converged) {
    // The current iterate met the gradient criterion; report it so that
    // converged implies the criterion holds for the reported values.
    x_best = x;
    g_best = grad;
    f_best = f;
    maha_best = maha;
  }

  report.iterations = it;
  report.converged = converged;
  report.gradient_norm = g_best.norm();
  report.objective = f_best;
  report.mahalanobis = maha_best;
  const std::map<int, SymMatrix> b = w.unpack(x_best);
  for (const auto& [fid, bmat] : b) {
    report.estimates.emplace(
        fid, SpdMatrix::from_floored(bmat.mat() * bmat.mat()));
  }
  for (const auto& [fid, val] : problem.fixed) {
    report.estimates.emplace(fid, val);
  }
  return report;
}

PreconditionResult precondition(const MrmfProblem& problem) {
  problem.validate();
  const int d = problem.dim();
  const int n_slots = problem.structure.num_slots();

  std::vector<SpdMatrix> y_inv;  // Y_n^{-1} = data_n^{-1/2}
  y_inv.reserve(static_cast<std::size_t>(n_slots));
  std::vector<Eigen::MatrixXd> y_sqrt(static_cast<std::size_t>(n_slots));
  for (int n = 0; n < n_slots; ++n) {
    const auto& sn = problem.data[static_cast<std::size_t>(n)];
    y_sqrt[static_cast<std::size_t>(n)] = sn.sqrt();
    y_inv.emplace_back(sn.inv_sqrt());
  }

  PreconditionResult out{MrmfProblem(problem.structure), {}};
  MrmfProblem& tp = out.problem;
  tp.lambdas = problem.lambdas;
  tp.settings = problem.settings;
  tp.fixed = problem.fixed;
  tp.data.assign(static_cast<std::size_t>(n_slots),
                 SpdMatrix(Eigen::MatrixXd::Identity(d, d)));

  // Precision transforms by the congruence operator that undoes the data
  // whitening: Gamma_tilde^{-1} = G Gamma^{-1} G with G : C -> Y C Y.
  const TangentOperator g_undo = build_congruence_operator(y_inv);
  tp.gamma_inv = problem.gamma_inv;
  tp.gamma_inv.mat = symmetrize(g_undo.mat * problem.gamma_inv.mat * g_undo.mat);

  tp.couplings.assign(static_cast<std::size_t>(n_slots),
                      Eigen::MatrixXd::Identity(d, d));
  tp.penalty_frames.assign(
      static_cast<std::size_t>(problem.structure.num_fidelities()),
      Eigen::MatrixXd::Identity(d, d));

  for (int f = 0; f < problem.structure.num_fidelities(); ++f) {
    const std::vector<int> slots = problem.structure.slots_with_fidelity(f);
    if (problem.fixed.count(f) > 0) {
      // Pinned fidelity: keep the pinned value, absorb the whitening into the
      // slot couplings.
      for (int n : slots) {
        tp.couplings[static_cast<std::size_t>(n)] =
            y_inv[static_cast<std::size_t>(n)].mat() * problem.coupling(n);
      }
      continue;
    }
    const int p = problem.structure.primary_slot(f);
    const Eigen::MatrixXd w_p = problem.coupling(p);
    // Sigma_l = back * Sigma_tilde_l * back^T with back = W_p^{-1} Y_p.
    const Eigen::MatrixXd back =
        w_p.partialPivLu().solve(y_sqrt[static_cast<std::size_t>(p)]);
    out.back[f] = back;
    for (int n : slots) {
      tp.couplings[static_cast<std::size_t>(n)] =
          y_inv[static_cast<std::size_t>(n)].mat() * problem.coupling(n) * back;
    }
    tp.penalty_frames[static_cast<std::size_t>(f)] =
        problem.penalty_frame(f) * back;
    const auto it = problem.init.find(f);
    if (it != problem.init.end()) {
      const Eigen::MatrixXd fwd = back.partialPivLu().solve(
          Eigen::MatrixXd::Identity(d, d));
      tp.init.emplace(
          f, SpdMatrix(symmetrize(fwd * it->second.mat() * fwd.transpose())));
    }
  }
  return out;
}

std::map<int, SpdMatrix> PreconditionResult::back_transform(
    const std::map<int, SpdMatrix>& estimates) const {
  std::map<int, SpdMatrix> out;
  for (const auto& [f, est] : estimates) {
    const auto it = back.find(f);
    if (it == back.end()) {
      out.emplace(f, est);  // pinned fidelity: already in original coordinates
    } else {
      out.emplace(f, SpdMatrix(symmetrize(it->second * est.mat() *
                                          it->second.transpose())));
    }
  }
  return out;
}

EstimateReport PreconditionResult::back_transform(EstimateReport report) const {
  report.estimates = back_transform(report.estimates);
  return report;
}

EstimateReport mrmf_solve_preconditioned(const MrmfProblem& problem) {
  PreconditionResult pre = precondition(problem);
  return pre.back_transform(mrmf_solve(pre.problem));
}

std::size_t select_lambda_index(const std::vector<double>& averages,
                                double target) {
  std::size_t best = averages.size();
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < averages.size(); ++i) {
    if (!std::isfinite(averages[i])) continue;
    const double gap = std::abs(averages[i] - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  if (best == averages.size()) {
    throw std::runtime_error("select_lambda_index: no usable grid point");
  }
  return best;
}

LambdaTuneResult tune_lambda(
    const std::function<MrmfProblem(int trial, double lambda)>& make_problem,
    const std::vector<double>& grid, int trials) {
  if (grid.empty() || trials < 1) {
    throw std::invalid_argument("tune_lambda: empty grid or no trials");
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw std::invalid_argument("tune_lambda: grid must be ascending");
    }
  }
  LambdaTuneResult result;
  result.mean_mahalanobis.assign(grid.size(),
                                 std::numeric_limits<double>::quiet_NaN());
  result.valid_trials.assign(grid.size(), 0);
  int dim_seen = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double sum = 0.0;
    int ok = 0;
    for (int t = 0; t < trials; ++t) {
      try {
        const MrmfProblem p = make_problem(t, grid[i]);
        if (dim_seen == 0) dim_seen = p.dim();
        const EstimateReport rep = mrmf_solve_preconditioned(p);
        if (std::isfinite(rep.mahalanobis)) {
          sum += rep.mahalanobis;
          ++ok;
        }
      } catch (const std::exception&) {
        // A diverged/failed solve: this trial contributes nothing.
      }
    }
    result.valid_trials[i] = ok;
    if (ok > 0) {
      result.mean_mahalanobis[i] = sum / static_cast<double>(ok);
    } else {
      std::cerr << "tune_lambda: all solves failed for lambda=" << grid[i]
                << "; excluding it\n";
    }
  }
  const double target =
      static_cast<double>(dim_seen) * (dim_seen + 1) / 2.0;
  result.index = select_lambda_index(result.mean_mahalanobis, target);
  result.lambda = grid[result.index];
  return result;
}

std::vector<double> log_spaced(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi > lo) || count < 2) {
    if (count == 1 && lo > 0.0) return {lo};
    throw std::invalid_argument("log_spaced: need 0 < lo < hi and count >= 1");
  }
  std::vector<double> out(static_cast<std::size_t>(count));
  const double llo = std::log(lo);
  const double lhi = std::log(hi);
  for (int i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] =
        std::exp(llo + (lhi - llo) * static_cast<double>(i) /
                           static_cast<double>(count - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

}  // namespace mfcov
