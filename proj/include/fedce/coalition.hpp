#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "fedce/errors.hpp"

namespace fedce {

inline constexpr int kMaxPlayers = 24;

// A subset of the players {0, ..., n-1}, stored as a bitmask.
class Coalition {
 public:
  using Mask = std::uint32_t;

  constexpr Coalition() = default;

  constexpr Coalition(Mask members, int n) : members_(members), n_(n) {
    if (n < 1 || n > kMaxPlayers) {
      throw InvalidArgument("coalition player count must be in [1, 24], got " + std::to_string(n));
    }
    if ((members & ~full_mask(n)) != 0) {
      throw InvalidArgument("coalition member index out of range");
    }
  }

  static constexpr Coalition empty(int n) { return Coalition(0, n); }
  static constexpr Coalition grand(int n) { return Coalition(full_mask(n), n); }
  static constexpr Coalition singleton(int i, int n) { return Coalition(Mask{1} << i, n); }

  static Coalition of(std::initializer_list<int> players, int n) {
    Mask m = 0;
    for (int p : players) {
      if (p < 0 || p >= n) throw InvalidArgument("coalition member index out of range");
      m |= Mask{1} << p;
    }
    return Coalition(m, n);
  }

  static constexpr Mask full_mask(int n) {
    return n >= 32 ? ~Mask{0} : ((Mask{1} << n) - 1);
  }

  constexpr Mask mask() const { return members_; }
  constexpr int players() const { return n_; }
  constexpr int size() const { return std::popcount(members_); }
  constexpr bool is_empty() const { return members_ == 0; }
  constexpr bool is_grand() const { return members_ == full_mask(n_); }
  constexpr bool contains(int i) const { return (members_ >> i) & 1U; }

  constexpr Coalition with(int i) const { return Coalition(members_ | (Mask{1} << i), n_); }
  constexpr Coalition without(int i) const { return Coalition(members_ & ~(Mask{1} << i), n_); }
  constexpr Coalition complement() const { return Coalition(~members_ & full_mask(n_), n_); }

  std::vector<int> members() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(size()));
    for (Mask m = members_; m != 0; m &= m - 1) out.push_back(std::countr_zero(m));
    return out;
  }

  friend constexpr bool operator==(const Coalition&, const Coalition&) = default;

 private:
  Mask members_ = 0;
  int n_ = 1;
};

// Number of subsets of an n-player set.
constexpr std::size_t subset_count(int n) { return std::size_t{1} << n; }

}  // namespace fedce
