#pragma once

#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "fedce/core.hpp"
#include "fedce/flsim.hpp"
#include "fedce/shapley.hpp"

namespace fedce {

inline constexpr std::size_t kDefaultBankCap = std::size_t{2} << 30;

struct CeOptions {
  std::size_t memory_cap_bytes = kDefaultBankCap;
  // Threads used to evaluate pseudo-models. Results do not depend on it.
  unsigned threads = 1;
};

// One approximate model per coalition, advanced round by round from its own
// previous state. Index 0 holds the shared initial model.
class PseudoModelBank {
 public:
  PseudoModelBank(int n, const ParamVector& init, std::size_t memory_cap_bytes = kDefaultBankCap) : n_(n) {
    if (n < 1 || n > kMaxPlayers) throw InvalidArgument("bank player count must be in [1, 24]");
    const std::size_t need = bytes_required(n, init.size());
    if (need > memory_cap_bytes) {
      throw MemoryBudgetExceeded("pseudo-model bank needs " + std::to_string(need >> 20) + " MiB, cap is " +
                                 std::to_string(memory_cap_bytes >> 20) + " MiB");
    }
    models_.assign(subset_count(n), init);
  }

  static std::size_t bytes_required(int n, std::size_t param_count) {
    return subset_count(n) * param_count * sizeof(double);
  }

  int players() const { return n_; }
  int round() const { return round_; }
  const ParamVector& initial() const { return models_[0]; }
  const ParamVector& model(Coalition s) const { return models_[s.mask()]; }

  // models[S] += sum_{i in S ∩ I_t} n_i / n(S ∩ I_t) * delta_i
  void update(const RoundLog& log) {
    if (log.t != round_ + 1) {
      throw RoundOrderViolation("bank at round " + std::to_string(round_) + " got round " + std::to_string(log.t));
    }
    if (log.players() != n_) throw InvalidArgument("round log has a different client count");
    const Coalition::Mask active = log.participants.mask();
    for (Coalition::Mask m = 1; m < models_.size(); ++m) {
      const Coalition::Mask live = m & active;
      if (live == 0) continue;
      double total = 0.0;
      for (Coalition::Mask b = live; b != 0; b &= b - 1) total += static_cast<double>(log.sizes[std::countr_zero(b)]);
      for (Coalition::Mask b = live; b != 0; b &= b - 1) {
        const auto i = static_cast<std::size_t>(std::countr_zero(b));
        models_[m].axpy(static_cast<double>(log.sizes[i]) / total, log.local_updates[i]);
      }
    }
    ++round_;
  }

 private:
  int n_;
  int round_ = 0;
  std::vector<ParamVector> models_;
};

namespace detail {

inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::max(1u, threads));
  if (workers == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

inline void check_logs(const std::vector<RoundLog>& logs) {
  if (logs.empty()) throw InvalidArgument("contribution evaluation needs at least one round");
}

// v̂(S) = acc(models[S]) - acc(init) for every S ⊆ within; other entries 0.
inline std::vector<double> pseudo_utilities(const PseudoModelBank& bank, const EvalSet& test, double v0,
                                            Coalition::Mask within, unsigned threads) {
  std::vector<Coalition::Mask> masks;
  for (Coalition::Mask m = within; m != 0; m = (m - 1) & within) masks.push_back(m);
  std::vector<double> table(subset_count(bank.players()), 0.0);
  parallel_for(masks.size(), threads, [&](std::size_t k) {
    table[masks[k]] = evaluate(bank.model(Coalition(masks[k], bank.players())), test) - v0;
  });
  return table;
}

// Shapley value of the game restricted to the players in `within`; players
// outside get 0.
inline PayoffVector restricted_shapley(int n, const std::vector<double>& table, Coalition::Mask within) {
  const auto members = Coalition(within, n).members();
  const int k = static_cast<int>(members.size());
  PayoffVector out(static_cast<std::size_t>(n));
  if (k == 0) return out;
  std::vector<double> sub(subset_count(k));
  for (Coalition::Mask m = 0; m < sub.size(); ++m) {
    Coalition::Mask full = 0;
    for (Coalition::Mask b = m; b != 0; b &= b - 1) full |= Coalition::Mask{1} << members[std::countr_zero(b)];
    sub[m] = table[full];
  }
  const auto phi = shapley_from_table(k, sub);
  for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(members[static_cast<std::size_t>(j)])] = phi[static_cast<std::size_t>(j)];
  return out;
}

inline std::vector<double> final_pseudo_utilities(const std::vector<RoundLog>& logs, const EvalSet& test,
                                                  const CeOptions& opts) {
  check_logs(logs);
  const int n = logs.front().players();
  PseudoModelBank bank(n, logs.front().global_before, opts.memory_cap_bytes);
  for (const auto& log : logs) bank.update(log);
  const double v0 = evaluate(bank.initial(), test);
  return pseudo_utilities(bank, test, v0, Coalition::full_mask(n), opts.threads);
}

}  // namespace detail

// Shapley value over the pseudo-models left after the last round.
inline PayoffVector or_shapley(const std::vector<RoundLog>& logs, const EvalSet& test, const CeOptions& opts = {}) {
  const auto table = detail::final_pseudo_utilities(logs, test, opts);
  return shapley_from_table(logs.front().players(), table);
}

// Least core of the same game, as found by the LP solver.
inline LeastCoreSolution or_least_core(const std::vector<RoundLog>& logs, const EvalSet& test,
                                       const CeOptions& opts = {}, const SolverLimits& limits = {},
                                       const lp::Options& lp_options = {}) {
  detail::check_logs(logs);
  const int n = logs.front().players();
  if (n > limits.least_core) throw PlayerCountExceeded(n, limits.least_core, "or_least_core");
  const auto table = detail::final_pseudo_utilities(logs, test, opts);
  return least_core(Game::from_table(n, table), limits, lp_options);
}

struct RoundContribution {
  int t = 0;
  PayoffVector values;
};

struct MrConfig {
  double lambda = 0.8;
  std::optional<double> truncation_threshold;
  bool accuracy_weighting = false;

  void validate() const {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must be in (0, 1]");
    if (truncation_threshold && !(*truncation_threshold > 0.0)) {
      throw InvalidArgument("truncation threshold must be positive");
    }
  }

  double decay(int t) const { return std::pow(lambda, t - 1); }
  bool truncated(int t) const { return truncation_threshold && decay(t) < *truncation_threshold; }
};

// Per-round Shapley values s_t over the round's participants. Rounds for
// which keep(t) is false stop the bank and everything after them.
template <class Keep>
std::vector<RoundContribution> round_contributions(const std::vector<RoundLog>& logs, const EvalSet& test,
                                                   const CeOptions& opts, Keep keep) {
  detail::check_logs(logs);
  const int n = logs.front().players();
  PseudoModelBank bank(n, logs.front().global_before, opts.memory_cap_bytes);
  const double v0 = evaluate(bank.initial(), test);
  std::vector<RoundContribution> out;
  bool stopped = false;
  for (const auto& log : logs) {
    stopped = stopped || !keep(log.t);
    if (stopped) {
      out.push_back({log.t, PayoffVector(static_cast<std::size_t>(n))});
      continue;
    }
    bank.update(log);
    const Coalition::Mask active = log.participants.mask();
    const auto table = detail::pseudo_utilities(bank, test, v0, active, opts.threads);
    out.push_back({log.t, detail::restricted_shapley(n, table, active)});
  }
  return out;
}

inline std::vector<RoundContribution> round_contributions(const std::vector<RoundLog>& logs, const EvalSet& test,
                                                          const CeOptions& opts = {}) {
  return round_contributions(logs, test, opts, [](int) { return true; });
}

struct FederatedShapleyResult {
  PayoffVector total;
  std::vector<RoundContribution> rounds;
};

inline FederatedShapleyResult federated_shapley(const std::vector<RoundLog>& logs, const EvalSet& test,
                                                const CeOptions& opts = {}) {
  FederatedShapleyResult out;
  out.rounds = round_contributions(logs, test, opts);
  out.total = PayoffVector(static_cast<std::size_t>(logs.front().players()));
  for (const auto& r : out.rounds) {
    for (std::size_t i = 0; i < out.total.size(); ++i) out.total[i] += r.values[i];
  }
  return out;
}

inline constexpr double kRoundSumGuard = 1e-9;

// sum_t lambda^(t-1) [* acc_t] * r_t(i) / sum_j r_t(j). Rounds with a total
// at or below the guard, and truncated rounds, add nothing. round_accuracy is
// indexed like rounds and only read when accuracy_weighting is set.
inline PayoffVector aggregate_round_cis(const std::vector<RoundContribution>& rounds, const MrConfig& cfg,
                                        std::span<const double> round_accuracy = {}) {
  cfg.validate();
  if (rounds.empty()) throw InvalidArgument("no round contributions");
  if (cfg.accuracy_weighting && round_accuracy.size() != rounds.size()) {
    throw InvalidArgument("accuracy weighting needs one accuracy per round");
  }
  PayoffVector out(rounds.front().values.size());
  for (std::size_t k = 0; k < rounds.size(); ++k) {
    const auto& r = rounds[k];
    if (cfg.truncated(r.t)) continue;
    const double total = r.values.sum();
    if (total <= kRoundSumGuard) continue;
    double w = cfg.decay(r.t);
    if (cfg.accuracy_weighting) w *= round_accuracy[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * r.values[i] / total;
  }
  return out;
}

inline PayoffVector lambda_mr(const std::vector<RoundLog>& logs, const EvalSet& test, MrConfig cfg = {},
                              const CeOptions& opts = {}) {
  cfg.validate();
  cfg.truncation_threshold.reset();
  cfg.accuracy_weighting = false;
  return aggregate_round_cis(round_contributions(logs, test, opts), cfg);
}

// Rounds whose decay falls below the threshold are skipped entirely; the
// rest are weighted by decay and the global model's test accuracy.
inline PayoffVector truncated_mr(const std::vector<RoundLog>& logs, const EvalSet& test, MrConfig cfg,
                                 const CeOptions& opts = {}) {
  cfg.validate();
  if (!cfg.truncation_threshold) throw InvalidArgument("truncated_mr needs a truncation threshold");
  cfg.accuracy_weighting = true;
  const auto rounds = round_contributions(logs, test, opts, [&](int t) { return !cfg.truncated(t); });
  std::vector<double> acc;
  for (const auto& log : logs) acc.push_back(log.test_acc_after);
  return aggregate_round_cis(rounds, cfg, acc);
}

enum class LooWeighting { None, Linear };

// loo[t][i] = acc(global_after_t) - acc(aggregate of I_t \ {i} from
// global_before_t). With no one left, the aggregate is global_before_t.
inline std::vector<std::vector<double>> round_loo_table(const std::vector<RoundLog>& logs, const EvalSet& test,
                                                        unsigned threads = 1) {
  detail::check_logs(logs);
  const int n = logs.front().players();
  std::vector<std::vector<double>> out;
  for (const auto& log : logs) {
    const double full = evaluate(log.global_after, test);
    std::vector<double> row(static_cast<std::size_t>(n), 0.0);
    const auto members = log.participants.members();
    detail::parallel_for(members.size(), threads, [&](std::size_t k) {
      const int i = members[k];
      const auto without = aggregate(log.global_before, log.local_updates, log.sizes, log.participants.without(i));
      row[static_cast<std::size_t>(i)] = full - evaluate(without, test);
    });
    out.push_back(std::move(row));
  }
  return out;
}

inline PayoffVector round_loo(const std::vector<RoundLog>& logs, const EvalSet& test, LooWeighting weighting,
                              unsigned threads = 1) {
  const auto table = round_loo_table(logs, test, threads);
  PayoffVector out(table.front().size());
  for (std::size_t r = 0; r < table.size(); ++r) {
    const double w = weighting == LooWeighting::Linear ? static_cast<double>(logs[r].t) : 1.0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * table[r][i];
  }
  return out;
}

// Share of rounds in which the client's LOO is strictly positive.
inline PayoffVector reputation_from_loo(const std::vector<std::vector<double>>& loo) {
  if (loo.empty()) throw InvalidArgument("reputation needs at least one round");
  PayoffVector out(loo.front().size());
  for (const auto& row : loo) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += row[i] > 0.0 ? 1.0 : 0.0;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= static_cast<double>(loo.size());
  return out;
}

inline PayoffVector reputation(const std::vector<RoundLog>& logs, const EvalSet& test, unsigned threads = 1) {
  return reputation_from_loo(round_loo_table(logs, test, threads));
}

}  // namespace fedce
