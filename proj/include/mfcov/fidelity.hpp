#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfcov {

/// Describes which fidelities are observed jointly.
///
/// Fidelity 0 is the high-fidelity model; fidelities 1..L are low-fidelity
/// models.  The observation stack is partitioned into groups: each group is a
/// set of fidelities whose sample covariances are computed from the *same*
/// underlying draws (and are therefore statistically dependent), while
/// distinct groups use independent draws.  Slots are the concatenation of the
/// groups in order, each group listing its fidelities in ascending order; the
/// covariance operator over the stack is exactly block-diagonal across
/// groups.
///
/// The canonical two-fidelity structure has groups {0,1} and {1}: one coupled
/// high/low pair estimated from shared draws plus an extra low-fidelity
/// covariance from independent draws.
class FidelityStructure {
 public:
  /// `num_low` is L; `groups` lists each group's fidelities.
  /// Validates: groups nonempty, fidelities within [0, L], no duplicates
  /// inside a group, and every fidelity 0..L appearing in at least one group
  /// (an unobserved fidelity could never be estimated).
  FidelityStructure(int num_low, std::vector<std::vector<int>> groups)
      : num_low_(num_low), groups_(std::move(groups)) {
    if (num_low_ < 0) {
      throw std::invalid_argument("FidelityStructure: negative fidelity count");
    }
    if (groups_.empty()) {
      throw std::invalid_argument("FidelityStructure: no groups");
    }
    std::vector<int> seen(num_low_ + 1, 0);
    for (std::size_t k = 0; k < groups_.size(); ++k) {
      auto& g = groups_[k];
      if (g.empty()) {
        throw std::invalid_argument("FidelityStructure: empty group");
      }
      std::vector<int> in_group(num_low_ + 1, 0);
      for (int f : g) {
        if (f < 0 || f > num_low_) {
          throw std::invalid_argument("FidelityStructure: fidelity " +
                                      std::to_string(f) + " out of range");
        }
        if (in_group[f]++) {
          throw std::invalid_argument(
              "FidelityStructure: duplicate fidelity inside a group");
        }
        ++seen[f];
      }
      std::sort(g.begin(), g.end());
      for (int f : g) {
        slot_fidelity_.push_back(f);
        slot_group_.push_back(static_cast<int>(k));
      }
    }
    for (int f = 0; f <= num_low_; ++f) {
      if (!seen[f]) {
        throw std::invalid_argument("FidelityStructure: fidelity " +
                                    std::to_string(f) +
                                    " appears in no group");
      }
    }
  }

  /// Number of low-fidelity models L (fidelities are 0..L).
  int num_low() const { return num_low_; }
  /// Number of fidelities, L + 1.
  int num_fidelities() const { return num_low_ + 1; }
  int num_groups() const { return static_cast<int>(groups_.size()); }
  /// Total number of slots N in the observation stack.
  int num_slots() const { return static_cast<int>(slot_fidelity_.size()); }

  const std::vector<std::vector<int>>& groups() const { return groups_; }
  int fidelity_of_slot(int n) const { return slot_fidelity_.at(n); }
  int group_of_slot(int n) const { return slot_group_.at(n); }
  const std::vector<int>& slot_fidelities() const { return slot_fidelity_; }

  std::vector<int> slots_with_fidelity(int f) const {
    std::vector<int> out;
    for (int n = 0; n < num_slots(); ++n) {
      if (slot_fidelity_[n] == f) out.push_back(n);
    }
    return out;
  }

  /// First slot carrying fidelity f.
  int primary_slot(int f) const {
    for (int n = 0; n < num_slots(); ++n) {
      if (slot_fidelity_[n] == f) return n;
    }
    throw std::logic_error("FidelityStructure: fidelity has no slot");
  }

  /// The canonical two-fidelity stack: groups {0,1} and {1}, three slots
  /// (coupled high, coupled low, independent low).
  static FidelityStructure coupled_pair_plus_low() {
    return FidelityStructure(1, {{0, 1}, {1}});
  }

  /// A single coupled group {0,1}, two slots, no independent low block.
  static FidelityStructure coupled_pair() {
    return FidelityStructure(1, {{0, 1}});
  }

 private:
  int num_low_ = 0;
  std::vector<std::vector<int>> groups_;
  std::vector<int> slot_fidelity_;
  std::vector<int> slot_group_;
};

}  // namespace mfcov
