#include "mfcov/tangent.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <Eigen/Eigenvalues>

namespace mfcov {

namespace {
constexpr double kSqrt2 = 1.4142135623730950488016887242097;
constexpr char kOperatorMagic[8] = {'T', 'A', 'N', 'O', 'P', '0', '1', '\n'};
}  // namespace

Eigen::VectorXd sym_to_flat(const Eigen::MatrixXd& x) {
  const int d = static_cast<int>(x.rows());
  Eigen::VectorXd v(sym_flat_size(d));
  int k = 0;
  for (int i = 0; i < d; ++i) v[k++] = x(i, i);
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) v[k++] = kSqrt2 * x(i, j);
  }
  return v;
}

Eigen::MatrixXd flat_to_sym(const Eigen::VectorXd& v, int d) {
  if (v.size() != sym_flat_size(d)) {
    throw std::invalid_argument("flat_to_sym: length does not match dimension");
  }
  Eigen::MatrixXd x(d, d);
  int k = 0;
  for (int i = 0; i < d; ++i) x(i, i) = v[k++];
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const double e = v[k++] / kSqrt2;
      x(i, j) = e;
      x(j, i) = e;
    }
  }
  return x;
}

Eigen::VectorXd TangentStack::flat() const {
  const int d = dim();
  const int q = sym_flat_size(d);
  Eigen::VectorXd v(count() * q);
  for (int n = 0; n < count(); ++n) {
    v.segment(n * q, q) = sym_to_flat(parts[static_cast<std::size_t>(n)]);
  }
  return v;
}

TangentStack TangentStack::from_flat(const Eigen::VectorXd& v, int d,
                                     int count) {
  const int q = sym_flat_size(d);
  if (v.size() != static_cast<Eigen::Index>(q) * count) {
    throw std::invalid_argument("TangentStack: length does not match layout");
  }
  TangentStack s;
  s.parts.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    s.parts.emplace_back(flat_to_sym(v.segment(n * q, q), d));
  }
  return s;
}

TangentOperator TangentOperator::identity(int d, int slots) {
  TangentOperator g;
  g.dim = d;
  g.rows = slots;
  g.cols = slots;
  g.mat = Eigen::MatrixXd::Identity(slots * sym_flat_size(d),
                                    slots * sym_flat_size(d));
  return g;
}

TangentOperator TangentOperator::zero(int d, int rows, int cols) {
  TangentOperator g;
  g.dim = d;
  g.rows = rows;
  g.cols = cols;
  g.mat = Eigen::MatrixXd::Zero(rows * sym_flat_size(d),
                                cols * sym_flat_size(d));
  return g;
}

Eigen::VectorXd apply(const TangentOperator& g, const Eigen::VectorXd& v) {
  if (v.size() != g.mat.cols()) {
    throw std::invalid_argument("apply: vector length does not match operator");
  }
  return g.mat * v;
}

TangentOperator build_congruence_operator(const std::vector<SpdMatrix>& ys) {
  if (ys.empty()) {
    throw std::invalid_argument("build_congruence_operator: empty list");
  }
  const int d = ys.front().dim();
  const int q = sym_flat_size(d);
  for (const auto& y : ys) {
    if (y.dim() != d) {
      throw std::invalid_argument(
          "build_congruence_operator: mixed dimensions");
    }
  }
  TangentOperator g = TangentOperator::zero(d, static_cast<int>(ys.size()),
                                            static_cast<int>(ys.size()));
  for (std::size_t n = 0; n < ys.size(); ++n) {
    const Eigen::MatrixXd yi = ys[n].inverse();
    // Column j of the block is the encoding of Y^{-1} E_j Y^{-1} for the
    // j-th orthonormal basis matrix E_j.
    Eigen::MatrixXd block(q, q);
    for (int j = 0; j < q; ++j) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(q);
      e[j] = 1.0;
      const Eigen::MatrixXd bj = flat_to_sym(e, d);
      block.col(j) = sym_to_flat(symmetrize(yi * bj * yi));
    }
    g.mat.block(static_cast<Eigen::Index>(n) * q,
                static_cast<Eigen::Index>(n) * q, q, q) =
        symmetrize(block);
  }
  return g;
}

TangentOperator regularized_inverse(const TangentOperator& g, double eps) {
  if (!g.square()) {
    throw std::invalid_argument("regularized_inverse: operator must be square");
  }
  const Eigen::Index m = g.mat.rows();
  const double shift = eps * g.mat.trace() / static_cast<double>(m);
  const Eigen::MatrixXd shifted =
      symmetrize(g.mat) + shift * Eigen::MatrixXd::Identity(m, m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(shifted);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("regularized_inverse: eigendecomposition failed");
  }
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (lmin <= 0.0 || lmax / lmin > 1e14) {
    throw std::runtime_error(
        "regularized_inverse: shifted operator numerically singular "
        "(condition estimate " +
        std::to_string(lmin > 0.0 ? lmax / lmin : std::nan("")) + ")");
  }
  TangentOperator out = g;
  out.mat = symmetrize(es.eigenvectors() *
                       es.eigenvalues().cwiseInverse().asDiagonal() *
                       es.eigenvectors().transpose());
  return out;
}

TangentOperator extract_block(const TangentOperator& g,
                              const std::vector<int>& row_slots,
                              const std::vector<int>& col_slots) {
  const int q = g.q();
  for (int r : row_slots) {
    if (r < 0 || r >= g.rows) {
      throw std::invalid_argument("extract_block: row slot out of range");
    }
  }
  for (int c : col_slots) {
    if (c < 0 || c >= g.cols) {
      throw std::invalid_argument("extract_block: column slot out of range");
    }
  }
  TangentOperator out = TangentOperator::zero(
      g.dim, static_cast<int>(row_slots.size()),
      static_cast<int>(col_slots.size()));
  for (std::size_t i = 0; i < row_slots.size(); ++i) {
    for (std::size_t j = 0; j < col_slots.size(); ++j) {
      out.mat.block(static_cast<Eigen::Index>(i) * q,
                    static_cast<Eigen::Index>(j) * q, q, q) =
          g.mat.block(static_cast<Eigen::Index>(row_slots[i]) * q,
                      static_cast<Eigen::Index>(col_slots[j]) * q, q, q);
    }
  }
  return out;
}

void zero_cross_group_blocks(TangentOperator& g, const FidelityStructure& fs) {
  if (!g.square() || g.rows != fs.num_slots()) {
    throw std::invalid_argument(
        "zero_cross_group_blocks: operator does not match structure");
  }
  const int q = g.q();
  for (int a = 0; a < g.rows; ++a) {
    for (int b = 0; b < g.cols; ++b) {
      if (fs.group_of_slot(a) != fs.group_of_slot(b)) {
        g.mat.block(static_cast<Eigen::Index>(a) * q,
                    static_cast<Eigen::Index>(b) * q, q, q)
            .setZero();
      }
    }
  }
}

void save_operator(const std::filesystem::path& path, const TangentOperator& g,
                   const std::vector<int>& slot_fidelities) {
  if (!g.square() ||
      g.rows != static_cast<int>(slot_fidelities.size())) {
    throw std::invalid_argument(
        "save_operator: operator must be square with one label per slot");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_operator: cannot open " + path.string());
  }
  out.write(kOperatorMagic, sizeof(kOperatorMagic));
  const std::int64_t d = g.dim;
  const std::int64_t n = g.rows;
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (int f : slot_fidelities) {
    const std::int64_t lf = f;
    out.write(reinterpret_cast<const char*>(&lf), sizeof(lf));
  }
  // Row-major element order.
  for (Eigen::Index i = 0; i < g.mat.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.mat.cols(); ++j) {
      const double x = g.mat(i, j);
      out.write(reinterpret_cast<const char*>(&x), sizeof(x));
    }
  }
  if (!out) {
    throw std::runtime_error("save_operator: write failed for " +
                             path.string());
  }
}

LoadedOperator load_operator(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_operator: cannot open " + path.string());
  }
  char magic[sizeof(kOperatorMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kOperatorMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("load_operator: bad magic in " + path.string());
  }
  std::int64_t d = 0;
  std::int64_t n = 0;
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || d < 1 || n < 1 || d > 4096 || n > 4096) {
    throw std::runtime_error("load_operator: bad header in " + path.string());
  }
  LoadedOperator loaded;
  loaded.slot_fidelities.resize(static_cast<std::size_t>(n));
  for (auto& f : loaded.slot_fidelities) {
    std::int64_t lf = 0;
    in.read(reinterpret_cast<char*>(&lf), sizeof(lf));
    f = static_cast<int>(lf);
  }
  loaded.op = TangentOperator::zero(static_cast<int>(d), static_cast<int>(n),
                                    static_cast<int>(n));
  for (Eigen::Index i = 0; i < loaded.op.mat.rows(); ++i) {
    for (Eigen::Index j = 0; j < loaded.op.mat.cols(); ++j) {
      double x = 0.0;
      in.read(reinterpret_cast<char*>(&x), sizeof(x));
      loaded.op.mat(i, j) = x;
    }
  }
  if (!in) {
    throw std::runtime_error("load_operator: truncated file " + path.string());
  }
  return loaded;
}

}  // namespace mfcov
