#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "fedce/coalition.hpp"
#include "fedce/errors.hpp"
#include "fedce/game.hpp"
#include "fedce/payoff.hpp"
#include "fedce/rng.hpp"

namespace fedce {

// Shapley weights |S|!(n-|S|-1)!/n! indexed by |S|, computed as
// 1 / (n * C(n-1, |S|)) to stay finite for n up to 24.
inline std::vector<double> shapley_weights(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  double binom = 1.0;  // C(n-1, s)
  for (int s = 0; s < n; ++s) {
    w[static_cast<std::size_t>(s)] = 1.0 / (static_cast<double>(n) * binom);
    binom = binom * static_cast<double>(n - 1 - s) / static_cast<double>(s + 1);
  }
  return w;
}

// Exact Shapley value from a table of all 2^n utilities.
inline PayoffVector shapley_from_table(int n, std::span<const double> v) {
  const auto w = shapley_weights(n);
  const Coalition::Mask full = Coalition::full_mask(n);
  PayoffVector phi(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Coalition::Mask bit = Coalition::Mask{1} << i;
    const Coalition::Mask rest = full & ~bit;
    // Enumerate subsets of N \ {i}, including the empty one.
    double acc = 0.0;
    Coalition::Mask s = rest;
    while (true) {
      acc += w[static_cast<std::size_t>(std::popcount(s))] * (v[s | bit] - v[s]);
      if (s == 0) break;
      s = (s - 1) & rest;
    }
    phi[static_cast<std::size_t>(i)] = acc;
  }
  return phi;
}

inline PayoffVector shapley_exact(const Game& game, const SolverLimits& limits = {}) {
  const int n = game.players();
  if (n > limits.shapley_exact) throw PlayerCountExceeded(n, limits.shapley_exact, "shapley_exact");
  const auto v = game.table();
  return shapley_from_table(n, v);
}

// Seeded stream of uniform permutations of {0, ..., n-1}.
class PermutationSampler {
 public:
  PermutationSampler(std::uint64_t seed, int n) : seed_(seed), n_(n), rng_(seed) {
    if (n < 1) throw InvalidArgument("permutation sampler needs n >= 1");
  }

  std::vector<int> draw() {
    std::vector<int> perm(static_cast<std::size_t>(n_));
    std::iota(perm.begin(), perm.end(), 0);
    rng_.shuffle(std::span<int>(perm));
    return perm;
  }

  std::uint64_t seed() const { return seed_; }
  int players() const { return n_; }

 private:
  std::uint64_t seed_;
  int n_;
  Rng rng_;
};

struct MonteCarloShapleyOptions {
  std::size_t iterations = 1000;
  // Stop once the estimate moves less than this (L-infinity) between checks.
  std::optional<double> early_stop;
  std::size_t check_every = 100;
};

struct MonteCarloShapleyResult {
  PayoffVector estimate;
  std::size_t iterations = 0;
};

// Permutation-sampling estimator: the running mean of marginal
// contributions v(S_pi^i + i) - v(S_pi^i) over sampled orderings.
inline MonteCarloShapleyResult shapley_monte_carlo_run(const Game& game, PermutationSampler& sampler,
                                                       const MonteCarloShapleyOptions& options) {
  const int n = game.players();
  if (sampler.players() != n) throw InvalidArgument("sampler player count does not match game");
  if (options.iterations < 1) throw InvalidArgument("shapley_monte_carlo needs at least one iteration");
  const auto un = static_cast<std::size_t>(n);
  std::vector<double> mean(un, 0.0);
  std::vector<double> checkpoint(un, 0.0);
  std::size_t done = 0;
  const double empty_value = game(Coalition::empty(n));
  while (done < options.iterations) {
    const auto perm = sampler.draw();
    ++done;
    Coalition::Mask prefix = 0;
    double prev = empty_value;
    for (int i : perm) {
      prefix |= Coalition::Mask{1} << i;
      const double cur = game(prefix);
      const auto idx = static_cast<std::size_t>(i);
      mean[idx] += (cur - prev - mean[idx]) / static_cast<double>(done);
      prev = cur;
    }
    if (options.early_stop && options.check_every > 0 && done % options.check_every == 0) {
      double moved = 0.0;
      for (std::size_t k = 0; k < un; ++k) moved = std::max(moved, std::abs(mean[k] - checkpoint[k]));
      if (done > options.check_every && moved < *options.early_stop) break;
      checkpoint = mean;
    }
  }
  return {PayoffVector(std::move(mean)), done};
}

inline PayoffVector shapley_monte_carlo(const Game& game, PermutationSampler& sampler, std::size_t iterations,
                                        std::optional<double> early_stop = std::nullopt) {
  MonteCarloShapleyOptions options;
  options.iterations = iterations;
  options.early_stop = early_stop;
  return shapley_monte_carlo_run(game, sampler, options).estimate;
}

}  // namespace fedce
