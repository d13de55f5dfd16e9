#include <gtest/gtest.h>

#include <map>
#include <random>

#include "fedce/shapley.hpp"
#include "oracles.hpp"

using fedce::Coalition;
using fedce::Game;
using fedce::PermutationSampler;

namespace {

// Frozen from oracle::shapley_by_permutations over the 6 orders of the glove game.
const std::vector<double> kGloveShapley{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0};

}  // namespace

TEST(ShapleyExact, GloveGameMatchesPermutationOracle) {
  const auto brute = oracle::shapley_by_permutations(3, oracle::glove_game());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(brute[i], kGloveShapley[i], 1e-15);
  const auto phi = fedce::shapley_exact(Game::from_table(3, oracle::glove_game()));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(phi[i], kGloveShapley[i], 1e-12);
}

TEST(ShapleyExact, SymmetricAdditiveSplitsEqually) {
  const auto phi = fedce::shapley_exact(Game(3, [](Coalition s) { return static_cast<double>(s.size()); }));
  for (double p : phi) EXPECT_NEAR(p, 1.0, 1e-12);
}

TEST(ShapleyExact, NullPlayerGetsZero) {
  // Player 2 never changes the value.
  Game g(3, [](Coalition s) { return s.contains(0) ? 1.0 + (s.contains(1) ? 2.0 : 0.0) : 0.5 * s.contains(1); });
  EXPECT_EQ(fedce::shapley_exact(g)[2], 0.0);
}

TEST(ShapleyExact, MatchesPermutationOracleOnRandomGames) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    const auto v = oracle::random_table(n, rng);
    const auto brute = oracle::shapley_by_permutations(n, v);
    const auto phi = fedce::shapley_exact(Game::from_table(n, v));
    for (int i = 0; i < n; ++i) EXPECT_NEAR(phi[static_cast<std::size_t>(i)], brute[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(ShapleyExact, EvaluatesEachSubsetExactlyOnce) {
  for (int n : {1, 4, 9}) {
    Game g(n, [](Coalition s) { return static_cast<double>(s.size() * s.size()); });
    (void)fedce::shapley_exact(g);
    EXPECT_EQ(g.oracle().evaluations(), fedce::subset_count(n));
  }
}

TEST(ShapleyExact, EnforcesPlayerCap) {
  Game g(21, [](Coalition) { return 0.0; });
  EXPECT_THROW(fedce::shapley_exact(g), fedce::PlayerCountExceeded);
  fedce::SolverLimits limits;
  limits.shapley_exact = 3;
  EXPECT_THROW(fedce::shapley_exact(Game(4, [](Coalition) { return 0.0; }), limits), fedce::PlayerCountExceeded);
}

TEST(ShapleyExact, WeightsSumToOneOverSubsetSizes) {
  for (int n = 1; n <= 24; ++n) {
    const auto w = fedce::shapley_weights(n);
    double total = 0.0;
    double binom = 1.0;
    for (int s = 0; s < n; ++s) {
      total += w[static_cast<std::size_t>(s)] * binom;
      binom = binom * (n - 1 - s) / (s + 1);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(PermutationSampler, SameSeedSameStream) {
  PermutationSampler a(99, 7), b(99, 7), c(100, 7);
  bool differs = false;
  for (int k = 0; k < 50; ++k) {
    const auto pa = a.draw();
    EXPECT_EQ(pa, b.draw());
    differs |= pa != c.draw();
  }
  EXPECT_TRUE(differs);
}

TEST(PermutationSampler, DrawsAreUniformOverOrders) {
  // Chi-square over the 24 orders of 4 elements.
  PermutationSampler s(5, 4);
  std::map<std::vector<int>, int> counts;
  const int draws = 48000;
  for (int k = 0; k < draws; ++k) ++counts[s.draw()];
  EXPECT_EQ(counts.size(), 24u);
  double chi2 = 0.0;
  const double expected = draws / 24.0;
  for (const auto& [perm, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 23 degrees of freedom, p = 0.001 critical value is 49.7.
  EXPECT_LT(chi2, 49.7);
}

TEST(ShapleyMonteCarlo, AdditiveGameExactAfterOneIteration) {
  const std::vector<double> w{0.3, 1.5, -0.2, 0.7};
  const auto g = Game::from_table(4, oracle::additive_game(w));
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    PermutationSampler s(seed, 4);
    const auto est = fedce::shapley_monte_carlo(g, s, 1);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(est[i], w[i], 1e-12);
  }
}

TEST(ShapleyMonteCarlo, GloveGameConverges) {
  const auto g = Game::from_table(3, oracle::glove_game());
  PermutationSampler s(2024, 3);
  const auto est = fedce::shapley_monte_carlo(g, s, 20000);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(est[i], kGloveShapley[i], 0.02);
}

TEST(ShapleyMonteCarlo, NullPlayerIsZeroAtEveryIteration) {
  Game g(3, [](Coalition s) { return (s.contains(0) ? 1.0 : 0.0) + (s.contains(1) ? 0.25 : 0.0); });
  PermutationSampler s(3, 3);
  for (std::size_t iters = 1; iters <= 20; ++iters) {
    PermutationSampler fresh(3, 3);
    EXPECT_EQ(fedce::shapley_monte_carlo(g, fresh, iters)[2], 0.0);
  }
}

TEST(ShapleyMonteCarlo, DeterministicGivenSeed) {
  std::mt19937_64 rng(3);
  const auto g = Game::from_table(5, oracle::random_table(5, rng));
  PermutationSampler a(42, 5), b(42, 5);
  EXPECT_EQ(fedce::shapley_monte_carlo(g, a, 500), fedce::shapley_monte_carlo(g, b, 500));
}

TEST(ShapleyMonteCarlo, EarlyStopEndsBeforeBudget) {
  const auto g = Game::from_table(3, oracle::glove_game());
  PermutationSampler s(8, 3);
  fedce::MonteCarloShapleyOptions opt;
  opt.iterations = 1'000'000;
  opt.early_stop = 1e-3;
  opt.check_every = 1000;
  const auto res = fedce::shapley_monte_carlo_run(g, s, opt);
  EXPECT_LT(res.iterations, opt.iterations);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(res.estimate[i], kGloveShapley[i], 0.05);
}

TEST(ShapleyMonteCarlo, RejectsZeroIterations) {
  const auto g = Game::from_table(3, oracle::glove_game());
  PermutationSampler s(1, 3);
  EXPECT_THROW(fedce::shapley_monte_carlo(g, s, 0), fedce::InvalidArgument);
  PermutationSampler wrong(1, 4);
  EXPECT_THROW(fedce::shapley_monte_carlo(g, wrong, 10), fedce::InvalidArgument);
}

// Error shrinks as the iteration budget grows, and ends below 1% of range.
TEST(ShapleyMonteCarlo, ErrorDecreasesWithIterations) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    const int n = 4 + trial;
    const auto v = oracle::random_table(n, rng);
    const auto g = Game::from_table(n, v);
    const auto exact = fedce::shapley_exact(g);
    const double range = *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
    auto err = [&](std::size_t iters) {
      double total = 0.0;
      for (std::uint64_t seed = 0; seed < 4; ++seed) {
        PermutationSampler s(1000 + seed, n);
        const auto est = fedce::shapley_monte_carlo(g, s, iters);
        double e = 0.0;
        for (int i = 0; i < n; ++i) e = std::max(e, std::abs(est[static_cast<std::size_t>(i)] - exact[static_cast<std::size_t>(i)]));
        total += e;
      }
      return total / 4.0;
    };
    const double e1k = err(1000), e100k = err(100000);
    EXPECT_LT(e100k, e1k);
    EXPECT_LT(e100k, 0.01 * range);
  }
}
