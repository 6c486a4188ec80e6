#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace mfcov {

/// Deterministic, splittable random streams.
///
/// Every consumer of randomness derives its own stream from a root seed plus
/// up to three stream labels (purpose, block, trial).  Streams derived from
/// distinct labels are statistically independent for Monte Carlo purposes and
/// do not depend on the order in which other streams are consumed, so results
/// are identical under any execution schedule (serial or threaded).
///
/// Normal variates are produced by an explicit Box-Muller transform on top of
/// std::mt19937_64 (whose output sequence is fully specified by the
/// standard), so identical seeds give bit-identical samples on any platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t root, std::uint64_t purpose = 0,
                     std::uint64_t block = 0, std::uint64_t trial = 0)
      : engine_(derive_seed(root, purpose, block, trial)) {}

  /// Raw 64-bit draw.
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal variate (Box-Muller, cached spare).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Column vector of independent standard normals.
  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// Matrix with independent standard normal entries (row-major fill order).
  Eigen::MatrixXd normal_matrix(int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t derive_seed(std::uint64_t root, std::uint64_t purpose,
                                   std::uint64_t block, std::uint64_t trial) {
    std::uint64_t s = splitmix64(root ^ 0xA02B0C347D2E5F11ULL);
    s = splitmix64(s ^ purpose * 0xD6E8FEB86659FD93ULL);
    s = splitmix64(s ^ block * 0xC2B2AE3D27D4EB4FULL);
    s = splitmix64(s ^ trial * 0x9E3779B97F4A7C15ULL);
    return s;
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mfcov
