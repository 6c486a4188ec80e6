#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "mfcov/fidelity.hpp"
#include "mfcov/spd.hpp"

namespace mfcov {

/// Length of the flat encoding of a symmetric d x d matrix: d(d+1)/2.
inline int sym_flat_size(int d) { return d * (d + 1) / 2; }

/// Isometric flat encoding of a symmetric matrix.
///
/// Order: the d diagonal entries (x_11, ..., x_dd), then the strict upper
/// triangle row-major ((1,2), (1,3), ..., (2,3), ...) scaled by sqrt(2).
/// With this scaling the Frobenius inner product of two symmetric matrices
/// equals the dot product of their encodings exactly, so Euclidean operator
/// algebra on encodings is Frobenius operator algebra on matrices.
Eigen::VectorXd sym_to_flat(const Eigen::MatrixXd& x);
inline Eigen::VectorXd sym_to_flat(const SymMatrix& x) {
  return sym_to_flat(x.mat());
}

/// Inverse of sym_to_flat.
Eigen::MatrixXd flat_to_sym(const Eigen::VectorXd& v, int d);

/// An element of the product tangent space: N symmetric d x d matrices.
struct TangentStack {
  std::vector<SymMatrix> parts;

  int count() const { return static_cast<int>(parts.size()); }
  int dim() const { return parts.empty() ? 0 : parts.front().dim(); }

  /// Concatenated flat encodings, length N * d(d+1)/2.
  Eigen::VectorXd flat() const;
  static TangentStack from_flat(const Eigen::VectorXd& v, int d, int count);
};

/// Dense linear operator on flat-encoded tangent stacks.
///
/// `rows`/`cols` count slots; the matrix is (rows*q) x (cols*q) with
/// q = d(d+1)/2.  Covariance operators and congruence operators are square
/// and symmetric; rectangular instances arise as cross blocks extracted from
/// larger operators.
struct TangentOperator {
  int dim = 0;   // d
  int rows = 0;  // slot count of the output stack
  int cols = 0;  // slot count of the input stack
  Eigen::MatrixXd mat;

  int q() const { return sym_flat_size(dim); }
  bool square() const { return rows == cols; }

  /// Relative asymmetry ||G - G^T|| / max(1, ||G||); square operators
  /// representing covariances should keep this at round-off level.
  double asymmetry() const {
    if (!square()) return 1.0;
    return (mat - mat.transpose()).norm() / std::max(1.0, mat.norm());
  }

  static TangentOperator identity(int d, int slots);
  static TangentOperator zero(int d, int rows, int cols);
};

/// Apply an operator to a flat vector (dimension-checked).
Eigen::VectorXd apply(const TangentOperator& g, const Eigen::VectorXd& v);

/// The congruence operator G_Y of a list of SPD matrices Y_1..Y_N: block
/// diagonal, block n acting as X -> Y_n^{-1} X Y_n^{-1} on flat encodings.
/// Each block (hence the whole operator) is symmetric, because congruence by
/// an SPD matrix is self-adjoint for the Frobenius inner product.
TangentOperator build_congruence_operator(const std::vector<SpdMatrix>& ys);

/// (G + shift * I)^{-1} with shift = eps * trace(G) / (N q), computed through
/// a symmetric eigendecomposition so the result is symmetric by construction.
/// Fails if the shifted operator is numerically singular (condition estimate
/// above 1e14) or indefinite.
TangentOperator regularized_inverse(const TangentOperator& g, double eps);

/// Sub-operator over the requested slot index sets (block granularity).
TangentOperator extract_block(const TangentOperator& g,
                              const std::vector<int>& row_slots,
                              const std::vector<int>& col_slots);

/// Zero every cross-group block of a square operator, enforcing the exact
/// independence structure of the fidelity groups.
void zero_cross_group_blocks(TangentOperator& g, const FidelityStructure& fs);

/// Binary operator file: magic + d + slot count + per-slot fidelity labels,
/// then the (rows*q) x (cols*q) matrix row-major as doubles.  Square
/// operators only (rows == cols == number of labels).
void save_operator(const std::filesystem::path& path, const TangentOperator& g,
                   const std::vector<int>& slot_fidelities);

struct LoadedOperator {
  TangentOperator op;
  std::vector<int> slot_fidelities;
};

LoadedOperator load_operator(const std::filesystem::path& path);

}  // namespace mfcov
