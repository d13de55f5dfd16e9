#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "fedce/coalition.hpp"

namespace fedce {

// Allocation of a game's value across its n players.
class PayoffVector {
 public:
  PayoffVector() = default;
  explicit PayoffVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit PayoffVector(std::vector<double> values) : values_(std::move(values)) {}
  PayoffVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

  // Sum over the members of s.
  double sum(Coalition s) const {
    double total = 0.0;
    for (Coalition::Mask m = s.mask(); m != 0; m &= m - 1) total += values_[std::countr_zero(m)];
    return total;
  }

  std::span<const double> values() const { return values_; }
  std::vector<double>& raw() { return values_; }

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  friend bool operator==(const PayoffVector&, const PayoffVector&) = default;

 private:
  std::vector<double> values_;
};

// Player-count caps guarding the exponential algorithms.
struct SolverLimits {
  int shapley_exact = 20;
  int core_membership = 20;
  int least_core = 16;
  int nucleolus = 10;
};

}  // namespace fedce
