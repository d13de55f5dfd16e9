#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "fedce/coalition.hpp"
#include "fedce/errors.hpp"
#include "fedce/game.hpp"
#include "fedce/lp.hpp"
#include "fedce/payoff.hpp"
#include "fedce/rng.hpp"

namespace fedce {

struct CoreCheck {
  bool member = false;
  bool efficient = false;
  // Coalition with the largest deficit v(S) - x(S) over nonempty S.
  Coalition worst;
  double worst_deficit = 0.0;
};

// x is in the epsilon-core iff x(N) = v(N) and x(S) >= v(S) - epsilon for
// every S.
inline CoreCheck core_membership(const Game& game, const PayoffVector& x, double epsilon,
                                 double tolerance = 1e-9, const SolverLimits& limits = {}) {
  const int n = game.players();
  if (n > limits.core_membership) throw PlayerCountExceeded(n, limits.core_membership, "core_membership");
  if (x.size() != static_cast<std::size_t>(n)) throw InvalidArgument("payoff length must equal player count");
  CoreCheck out;
  out.efficient = std::abs(x.sum() - game.grand_value()) <= tolerance * std::max(1.0, std::abs(game.grand_value()));
  out.worst = Coalition::grand(n);
  out.worst_deficit = -std::numeric_limits<double>::infinity();
  for (Coalition::Mask m = 1; m < subset_count(n); ++m) {
    const Coalition s(m, n);
    const double deficit = game(s) - x.sum(s);
    if (deficit > out.worst_deficit) {
      out.worst_deficit = deficit;
      out.worst = s;
    }
  }
  out.member = out.efficient && out.worst_deficit <= epsilon + tolerance;
  return out;
}

struct LeastCoreSolution {
  PayoffVector payoff;
  double epsilon_star = 0.0;
  // v(S) - x(S) for every coalition that entered the LP.
  std::map<Coalition::Mask, double> deficits;
  bool core_nonempty = false;   // epsilon_star <= 0
  bool non_negative = false;    // every x_i >= 0
  std::size_t constraint_count = 0;
  // Monte Carlo variant only: share of all nonempty proper coalitions with
  // x(S) + epsilon_star + e < v(S). Negative when the audit was not run.
  double audit_violation_fraction = -1.0;
};

namespace detail {

inline constexpr double kCoreTolerance = 1e-7;

// min eps  s.t.  x(N) = v(N); rows x(S) + eps >= v(S) come from add_coalition_row.
// Variables are x_0..x_{n-1}, eps, all free.
inline lp::Problem least_core_lp(int n, double grand) {
  const auto un = static_cast<std::size_t>(n);
  lp::Problem p;
  p.objective.assign(un + 1, 0.0);
  p.objective[un] = 1.0;
  std::vector<double> eff(un + 1, 1.0);
  eff[un] = 0.0;
  p.add(std::move(eff), lp::Relation::Equal, grand);
  return p;
}

inline void add_coalition_row(lp::Problem& p, int n, Coalition::Mask m, double value) {
  const auto un = static_cast<std::size_t>(n);
  std::vector<double> row(un + 1, 0.0);
  for (Coalition::Mask b = m; b != 0; b &= b - 1) row[static_cast<std::size_t>(std::countr_zero(b))] = 1.0;
  row[un] = 1.0;
  p.add(std::move(row), lp::Relation::GreaterEqual, value);
}

inline LeastCoreSolution finish_least_core(const Game& game, const lp::Problem& p, const lp::Solution& sol,
                                           const std::vector<Coalition::Mask>& coalitions) {
  const int n = game.players();
  const auto un = static_cast<std::size_t>(n);
  if (sol.status == lp::Status::Infeasible) throw LpInfeasible("least-core LP reported infeasible");
  if (sol.status == lp::Status::Unbounded) throw LpUnbounded("least-core LP reported unbounded");
  LeastCoreSolution out;
  out.payoff = PayoffVector(std::vector<double>(sol.x.begin(), sol.x.begin() + static_cast<std::ptrdiff_t>(un)));
  out.epsilon_star = sol.x[un];
  for (Coalition::Mask m : coalitions) out.deficits[m] = game(m) - out.payoff.sum(Coalition(m, n));
  out.core_nonempty = out.epsilon_star <= kCoreTolerance;
  out.non_negative = std::all_of(out.payoff.begin(), out.payoff.end(), [](double v) { return v >= -kCoreTolerance; });
  out.constraint_count = p.constraints.size();
  return out;
}

// Nonempty proper coalitions; for n = 1 the grand coalition stands in so
// that epsilon is bounded.
inline std::vector<Coalition::Mask> all_constrained_coalitions(int n) {
  std::vector<Coalition::Mask> out;
  const Coalition::Mask full = Coalition::full_mask(n);
  if (n == 1) return {full};
  out.reserve(subset_count(n) - 2);
  for (Coalition::Mask m = 1; m < full; ++m) out.push_back(m);
  return out;
}

}  // namespace detail

inline LeastCoreSolution least_core(const Game& game, const SolverLimits& limits = {}, const lp::Options& lp_options = {}) {
  const int n = game.players();
  if (n > limits.least_core) throw PlayerCountExceeded(n, limits.least_core, "least_core");
  const auto coalitions = detail::all_constrained_coalitions(n);
  auto p = detail::least_core_lp(n, game.grand_value());
  for (Coalition::Mask m : coalitions) detail::add_coalition_row(p, n, m, game(m));
  const auto sol = lp::solve(p, lp_options);
  return detail::finish_least_core(game, p, sol, coalitions);
}

struct McLeastCoreParams {
  double e = 0.05;       // additive violation allowance
  double delta = 0.1;    // violation probability
  double Delta = 0.05;   // confidence failure probability
  double tau = 1.0;      // utility range
  std::size_t sample_count = 0;  // 0 => derive from the bound below

  // ceil(tau^2 (ln n + ln(1/Delta)) / (e^2 delta^2)), at least 1.
  static std::size_t required_samples(int n, double e, double delta, double Delta, double tau) {
    const double num = tau * tau * (std::log(static_cast<double>(n)) + std::log(1.0 / Delta));
    const double den = e * e * delta * delta;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(num / den)));
  }

  void validate() const {
    if (!(e > 0.0)) throw InvalidArgument("MC least core: e must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("MC least core: delta must be in (0,1)");
    if (!(Delta > 0.0 && Delta < 1.0)) throw InvalidArgument("MC least core: Delta must be in (0,1)");
    if (!(tau >= 0.0)) throw InvalidArgument("MC least core: tau must be >= 0");
  }

  std::size_t samples_for(int n) const {
    return sample_count > 0 ? sample_count : required_samples(n, e, delta, Delta, tau);
  }
};

// Draws coalitions uniformly from the nonempty proper subsets.
class CoalitionSampler {
 public:
  CoalitionSampler(std::uint64_t seed, int n) : n_(n), rng_(seed) {
    if (n < 2) throw InvalidArgument("coalition sampler needs n >= 2");
  }

  Coalition draw() {
    const std::uint64_t proper = subset_count(n_) - 2;
    return Coalition(static_cast<Coalition::Mask>(1 + rng_.below(proper)), n_);
  }

  int players() const { return n_; }

 private:
  int n_;
  Rng rng_;
};

// Least core restricted to sampled coalitions. Epsilon is floored at
// -max(tau, max |v| seen) so that sparse samples cannot make the LP unbounded.
inline LeastCoreSolution least_core_monte_carlo(const Game& game, const McLeastCoreParams& params,
                                                CoalitionSampler& sampler, const SolverLimits& limits = {},
                                                const lp::Options& lp_options = {}) {
  params.validate();
  const int n = game.players();
  if (sampler.players() != n) throw InvalidArgument("sampler player count does not match game");
  const std::size_t draws = params.samples_for(n);
  std::set<Coalition::Mask> unique;
  for (std::size_t k = 0; k < draws; ++k) unique.insert(sampler.draw().mask());
  const std::vector<Coalition::Mask> coalitions(unique.begin(), unique.end());

  const double grand = game.grand_value();
  auto p = detail::least_core_lp(n, grand);
  double scale = std::max(params.tau, std::abs(grand));
  for (Coalition::Mask m : coalitions) {
    const double v = game(m);
    scale = std::max(scale, std::abs(v));
    detail::add_coalition_row(p, n, m, v);
  }
  p.bounds.assign(static_cast<std::size_t>(n) + 1, {});
  p.bounds.back().lower = -scale;
  const auto sol = lp::solve(p, lp_options);
  auto out = detail::finish_least_core(game, p, sol, coalitions);

  if (n <= limits.least_core) {
    std::size_t violated = 0;
    const Coalition::Mask full = Coalition::full_mask(n);
    for (Coalition::Mask m = 1; m < full; ++m) {
      if (out.payoff.sum(Coalition(m, n)) + out.epsilon_star + params.e < game(m)) ++violated;
    }
    out.audit_violation_fraction = static_cast<double>(violated) / static_cast<double>(full - 1);
  }
  return out;
}

struct NucleolusResult {
  PayoffVector payoff;
  std::vector<double> stage_epsilons;  // excess level fixed at each stage
  double least_core_epsilon = 0.0;
};

namespace detail {

// Incremental rank tracker over 0/1 coalition vectors (Gram-Schmidt style
// elimination on dense rows).
class SpanTracker {
 public:
  explicit SpanTracker(int n) : n_(static_cast<std::size_t>(n)) {}

  std::vector<double> reduce(std::vector<double> v) const {
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      const double f = v[pivots_[k]];
      if (f == 0.0) continue;
      for (std::size_t i = 0; i < n_; ++i) v[i] -= f * rows_[k][i];
    }
    return v;
  }

  bool in_span(const std::vector<double>& v) const {
    const auto r = reduce(v);
    return std::all_of(r.begin(), r.end(), [](double a) { return std::abs(a) < 1e-9; });
  }

  void add(const std::vector<double>& v) {
    auto r = reduce(v);
    std::size_t piv = n_;
    for (std::size_t i = 0; i < n_; ++i) {
      if (std::abs(r[i]) > 1e-9 && (piv == n_ || std::abs(r[i]) > std::abs(r[piv]))) piv = i;
    }
    if (piv == n_) return;
    const double s = r[piv];
    for (double& a : r) a /= s;
    for (auto& row : rows_) {
      const double f = row[piv];
      if (f == 0.0) continue;
      for (std::size_t i = 0; i < n_; ++i) row[i] -= f * r[i];
    }
    rows_.push_back(std::move(r));
    pivots_.push_back(piv);
  }

  std::size_t rank() const { return rows_.size(); }

 private:
  std::size_t n_;
  std::vector<std::vector<double>> rows_;
  std::vector<std::size_t> pivots_;
};

inline std::vector<double> indicator(int n, Coalition::Mask m) {
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  for (Coalition::Mask b = m; b != 0; b &= b - 1) v[static_cast<std::size_t>(std::countr_zero(b))] = 1.0;
  return v;
}

}  // namespace detail

// Sequential-LP nucleolus: minimize the largest excess, fix the coalitions
// that are tight in every optimum (positive dual), drop coalitions whose
// excess is then determined, and repeat on the rest.
inline NucleolusResult nucleolus(const Game& game, const SolverLimits& limits = {},
                                 const lp::Options& lp_options = {}) {
  const int n = game.players();
  if (n > limits.nucleolus) throw PlayerCountExceeded(n, limits.nucleolus, "nucleolus");
  const auto un = static_cast<std::size_t>(n);
  const double grand = game.grand_value();
  NucleolusResult out;
  if (n == 1) {
    out.payoff = PayoffVector{grand};
    return out;
  }

  detail::SpanTracker span(n);
  span.add(std::vector<double>(un, 1.0));
  std::vector<std::pair<Coalition::Mask, double>> fixed;  // x(S) = v(S) - excess
  std::vector<Coalition::Mask> free = detail::all_constrained_coalitions(n);
  std::vector<double> x;

  while (true) {
    lp::Problem p;
    p.objective.assign(un + 1, 0.0);
    p.objective[un] = 1.0;
    std::vector<double> eff(un + 1, 1.0);
    eff[un] = 0.0;
    p.add(std::move(eff), lp::Relation::Equal, grand);
    for (const auto& [m, excess] : fixed) {
      auto row = detail::indicator(n, m);
      row.push_back(0.0);
      p.add(std::move(row), lp::Relation::Equal, game(m) - excess);
    }
    const std::size_t first_free = p.constraints.size();
    for (Coalition::Mask m : free) detail::add_coalition_row(p, n, m, game(m));

    const auto sol = lp::solve(p, lp_options);
    if (sol.status != lp::Status::Optimal) {
      throw LpInfeasible(std::string("nucleolus stage LP: ") + lp::to_string(sol.status));
    }
    const double eps = sol.x[un];
    if (out.stage_epsilons.empty()) out.least_core_epsilon = eps;
    out.stage_epsilons.push_back(eps);
    x.assign(sol.x.begin(), sol.x.begin() + static_cast<std::ptrdiff_t>(un));

    std::vector<Coalition::Mask> newly_fixed;
    for (std::size_t k = 0; k < free.size(); ++k) {
      const double dual = sol.duals[first_free + k];
      if (dual <= detail::kCoreTolerance) continue;
      if (std::abs(lp::slack(p.constraints[first_free + k], sol.x)) > detail::kCoreTolerance) {
        throw DegenerateTightSet("nucleolus: coalition with positive dual is not tight");
      }
      newly_fixed.push_back(free[k]);
    }
    if (newly_fixed.empty()) throw DegenerateTightSet("nucleolus: no coalition identified as tight");

    for (Coalition::Mask m : newly_fixed) {
      fixed.emplace_back(m, eps);
      span.add(detail::indicator(n, m));
    }
    if (span.rank() >= un) break;
    std::vector<Coalition::Mask> remaining;
    for (Coalition::Mask m : free) {
      if (std::find(newly_fixed.begin(), newly_fixed.end(), m) != newly_fixed.end()) continue;
      if (span.in_span(detail::indicator(n, m))) continue;
      remaining.push_back(m);
    }
    if (remaining.empty()) break;
    free = std::move(remaining);
  }
  out.payoff = PayoffVector(std::move(x));
  return out;
}

}  // namespace fedce
