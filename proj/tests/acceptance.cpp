// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "ce_oracles.hpp"
#include "fedce/bench.hpp"
#include "fedce/ce.hpp"
#include "fedce/core.hpp"
#include "fedce/learn.hpp"
#include "fedce/shapley.hpp"
#include "fl_fixtures.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using fedce::Coalition;
using fedce::Game;

namespace {

int failures = 0;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void report(int id, bool ok, const std::string& what, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("%s criterion %d: %s | %s\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("fedce_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fedce::MetricsRow* row_for(const std::vector<fedce::MetricsRow>& rows, int n, const std::string& m) {
  for (const auto& r : rows) {
    if (r.clients == n && r.method == m) return &r;
  }
  return nullptr;
}

// 1. Shapley axioms on random games.
void axioms() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20240601);
  double eff = 0, sym = 0, add = 0, null_max = 0;
  for (int g = 0; g < 200; ++g) {
    const int n = 2 + g % 7;
    const auto v = oracle::random_table(n, rng);
    const auto w = oracle::random_table(n, rng);
    const auto phi = fedce::shapley_exact(Game::from_table(n, v));
    eff = std::max(eff, std::abs(phi.sum() - v.back()));

    std::uniform_int_distribution<int> pick(0, n - 1);
    const int i = pick(rng);
    int j = pick(rng);
    if (j == i) j = (i + 1) % n;
    auto sv = v;
    for (std::uint32_t m = 0; m < v.size(); ++m) {
      std::uint32_t s = m & ~((1u << i) | (1u << j));
      if (m >> i & 1) s |= 1u << j;
      if (m >> j & 1) s |= 1u << i;
      sv[m] = 0.5 * (v[m] + v[s]);
    }
    const auto ps = fedce::shapley_exact(Game::from_table(n, sv));
    sym = std::max(sym, std::abs(ps[static_cast<std::size_t>(i)] - ps[static_cast<std::size_t>(j)]));

    const int k = pick(rng);
    auto nv = v;
    for (std::uint32_t m = 0; m < v.size(); ++m) nv[m] = v[m & ~(1u << k)];
    const auto pn = fedce::shapley_exact(Game::from_table(n, nv));
    null_max = std::max(null_max, std::abs(pn[static_cast<std::size_t>(k)]));

    auto vw = v;
    for (std::size_t m = 0; m < v.size(); ++m) vw[m] += w[m];
    const auto pw = fedce::shapley_exact(Game::from_table(n, w));
    const auto pvw = fedce::shapley_exact(Game::from_table(n, vw));
    for (std::size_t q = 0; q < phi.size(); ++q) add = std::max(add, std::abs(pvw[q] - phi[q] - pw[q]));
  }
  const double t = since(start);
  report(1, eff < 1e-9 && sym < 1e-9 && null_max == 0.0 && add < 1e-9 && t < 30.0,
         "Shapley axioms on 200 random games, n <= 8",
         fmt("efficiency %.2e, symmetry %.2e, null %.1e, additivity %.2e, %.2f s", eff, sym, null_max, add, t));
}

// 2. Glove Shapley, majority least core, two-player nucleolus against hand and
// brute-force oracles.
void oracle_equivalence() {
  const auto glove = oracle::glove_game();
  const auto phi = fedce::shapley_exact(Game::from_table(3, glove));
  const auto perm = oracle::shapley_by_permutations(3, glove);
  const std::vector<double> glove_hand{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0};
  double glove_err = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    glove_err = std::max({glove_err, std::abs(phi[i] - glove_hand[i]), std::abs(perm[i] - glove_hand[i])});
  }

  // Least core by vertex enumeration over (x0, x1, eps), x2 = v(N) - x0 - x1.
  const auto maj = oracle::majority_game();
  std::vector<std::vector<double>> rows;
  std::vector<double> rhs;
  for (std::uint32_t m = 1; m < 7; ++m) {
    const double in2 = m >> 2 & 1;
    rows.push_back({(m & 1) - in2, (m >> 1 & 1) - in2, 1.0});
    rhs.push_back(maj[m] - in2 * maj[7]);
  }
  const double eps_oracle = oracle::lp_by_vertices(rows, rhs, {0.0, 0.0, 1.0});
  const auto lc = fedce::least_core(Game::from_table(3, maj));
  double lc_err = std::max(std::abs(lc.epsilon_star - 1.0 / 3.0), std::abs(eps_oracle - 1.0 / 3.0));
  for (std::size_t i = 0; i < 3; ++i) lc_err = std::max(lc_err, std::abs(lc.payoff[i] - 1.0 / 3.0));
  lc_err = std::max(lc_err, std::abs(oracle::max_deficit(3, maj, {lc.payoff.begin(), lc.payoff.end()}) - 1.0 / 3.0));

  double nuc_err = 0.0;
  for (auto [a, b, c] : {std::tuple{0.2, 0.3, 1.0}, std::tuple{0.0, 0.0, 1.0}, std::tuple{0.5, 0.1, 0.6}}) {
    const auto nuc = fedce::nucleolus(Game::from_table(2, {0.0, a, b, c}));
    nuc_err = std::max({nuc_err, std::abs(nuc.payoff[0] - (c + a - b) / 2.0), std::abs(nuc.payoff[1] - (c + b - a) / 2.0)});
  }
  report(2, glove_err < 1e-7 && lc_err < 1e-7 && nuc_err < 1e-7,
         "glove Shapley, majority least core, bargaining nucleolus",
         fmt("glove %.1e, least core %.1e (eps* %.9f), nucleolus %.1e", glove_err, lc_err, lc.epsilon_star, nuc_err));
}

// 3. Monte Carlo Shapley error after 100k permutations.
void mc_convergence() {
  const auto start = Clock::now();
  double worst_ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const auto v = oracle::random_table(6, rng);
    const auto game = Game::from_table(6, v);
    const auto exact = oracle::shapley_by_permutations(6, v);
    fedce::PermutationSampler sampler(seed, 6);
    const auto est = fedce::shapley_monte_carlo(game, sampler, 100000);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double err = 0.0;
    for (std::size_t i = 0; i < 6; ++i) err = std::max(err, std::abs(est[i] - exact[i]));
    worst_ratio = std::max(worst_ratio, err / (*hi - *lo));
  }
  const double t = since(start);
  report(3, worst_ratio < 0.01 && t < 60.0, "MC Shapley n=6, 100k permutations, seeds 0-9",
         fmt("worst Linf error / range(v) = %.5f, %.2f s", worst_ratio, t));
}

// 4. PAC audit of the sampled least core on the majority game.
void mc_least_core_audit() {
  fedce::McLeastCoreParams p;
  p.e = 0.05;
  p.delta = 0.1;
  const auto maj = oracle::majority_game();
  const auto game = Game::from_table(3, maj);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    fedce::CoalitionSampler sampler(seed, 3);
    const auto sol = fedce::least_core_monte_carlo(game, p, sampler);
    const std::vector<double> x(sol.payoff.begin(), sol.payoff.end());
    int violated = 0;
    for (std::uint32_t m = 1; m < 7; ++m) {
      if (oracle::coalition_sum(x, m) + sol.epsilon_star + p.e < maj[m]) ++violated;
    }
    worst = std::max(worst, violated / 6.0);
  }
  report(4, worst <= p.delta, "MC least core, majority game, e=0.05 delta=0.1, 50 seeds",
         fmt("worst violation fraction %.4f", worst));
}

// Reference loss written independently of the library's forward pass.
double reference_loss(const fedce::ParamVector& p, const fedce::EvalSet& d) {
  const auto& s = p.spec();
  const std::size_t D = s.input_dim, H = s.hidden_units, C = s.num_classes;
  double total = 0.0;
  for (std::size_t r = 0; r < d.size(); ++r) {
    const auto x = d.row(r);
    std::vector<double> z(C);
    if (H == 0) {
      for (std::size_t c = 0; c < C; ++c) {
        z[c] = p[D * C + c];
        for (std::size_t k = 0; k < D; ++k) z[c] += x[k] * p[k * C + c];
      }
    } else {
      std::vector<double> h(H);
      for (std::size_t j = 0; j < H; ++j) {
        double a = p[D * H + j];
        for (std::size_t k = 0; k < D; ++k) a += x[k] * p[k * H + j];
        h[j] = std::max(0.0, a);
      }
      const std::size_t w2 = D * H + H, b2 = w2 + H * C;
      for (std::size_t c = 0; c < C; ++c) {
        z[c] = p[b2 + c];
        for (std::size_t j = 0; j < H; ++j) z[c] += h[j] * p[w2 + j * C + c];
      }
    }
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - mx);
    total += mx + std::log(lse) - z[static_cast<std::size_t>(d.labels[r])];
  }
  return total / static_cast<double>(d.size());
}

double worst_relative_error(fedce::ParamVector p, const fedce::EvalSet& d, std::size_t samples, std::uint64_t seed) {
  const auto analytic = fedce::loss_and_gradient(p, d).gradient;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const std::size_t i = samples >= p.size() ? k : pick(rng);
    if (i >= p.size()) break;
    const double saved = p[i];
    p[i] = saved + h;
    const double up = reference_loss(p, d);
    p[i] = saved - h;
    const double down = reference_loss(p, d);
    p[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

// 5. Backprop against central differences.
void gradient_check() {
  fedce::EvalSet data;
  if (fixture::have_mnist()) {
    data = fedce::split_at(fedce::load_mnist(fixture::kMnist, false), 64).first;
  } else {
    data = fedce::synth_dataset(10, 784, 7, 1.0, 5);
  }
  auto with_biases = [](fedce::ParamVector p, std::size_t from, std::size_t count) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.05, 0.2);
    for (std::size_t k = 0; k < count; ++k) p[from + k] = u(rng);
    return p;
  };
  const auto lr_spec = fedce::ModelSpec::logistic(784, 10);
  const auto lr = with_biases(fedce::init_params(lr_spec, 1), 7840, 10);
  auto mlp_spec = fedce::ModelSpec::mlp(784, 64, 10);
  mlp_spec.dropout_p = 0.0;
  const auto mlp = with_biases(fedce::init_params(mlp_spec, 2), 784 * 64, 64);
  const double e_lr = worst_relative_error(lr, data, 300, 3);
  const double e_mlp = worst_relative_error(mlp, data, 300, 4);
  // Every bias and second-layer weight of the MLP as well.
  auto tail = mlp;
  double e_tail = 0.0;
  {
    const auto analytic = fedce::loss_and_gradient(tail, data).gradient;
    for (std::size_t i = 784 * 64; i < tail.size(); i += 7) {
      const double saved = tail[i];
      tail[i] = saved + 1e-5;
      const double up = reference_loss(tail, data);
      tail[i] = saved - 1e-5;
      const double down = reference_loss(tail, data);
      tail[i] = saved;
      const double numeric = (up - down) / 2e-5;
      e_tail = std::max(e_tail, std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6}));
    }
  }
  report(5, std::max(e_mlp, e_tail) < 1e-4 && e_lr < 1e-6, "gradient check, MLP-64 and logistic regression",
         fmt("MLP-64 max rel err %.2e (random 300) / %.2e (output layer), logistic %.2e", e_mlp, e_tail, e_lr));
}

// 6. Full-shard MNIST, two clients with noise 0 and 0.5.
void mnist_replication() {
  if (!fixture::have_mnist()) {
    report(6, false, "MNIST desk-scale replication", "MNIST files missing; run tools/fetch_mnist.sh");
    return;
  }
  const auto start = Clock::now();
  std::istringstream in(
      "dataset = mnist\n"
      "num_clients = 2\n"
      "noise = 0, 0.5\n"
      "methods = or-shapley, loo, or-lc\n"
      "model = mlp\nhidden_units = 64\ndropout = 0.5\n"
      "lr = 0.01\nmomentum = 0.5\nbatch_size = 64\nrounds = 5\nlocal_epochs = 10\n");
  auto cfg = fedce::parse_config(in);
  cfg.mnist_dir = fixture::kMnist.string();
  cfg.output_dir = scratch("mnist").string();
  fedce::run_experiment(cfg);
  const auto rows = fedce::emit_report(cfg.output_dir);
  const auto* sv = row_for(rows, 2, "or-shapley");
  const auto* loo = row_for(rows, 2, "loo");
  const auto* lc = row_for(rows, 2, "or-lc");
  const double t = since(start);
  const bool ok = sv && loo && lc && sv->ok == 5 && loo->ok == 5 && std::abs(100 * sv->acc - 94.9) <= 2.0 &&
                  sv->max_dif >= 0.8 && sv->max_dif <= 1.0 && loo->max_dif >= 0.9 && t < 900.0;
  report(6, ok, "MNIST n=2 noise [0, 0.5], full shards, 5 seeds",
         fmt("acc %.2f%% (reference 94.9), OR-Shapley max_dif %.3f (0.92), LOO max_dif %.3f (0.98), OR-LC B %.3f, %.0f s",
             100 * (sv ? sv->acc : 0), sv ? sv->max_dif : -1, loo ? loo->max_dif : -1, lc ? lc->budget : -1, t));
}

fedce::ExperimentConfig monotonicity_config(const std::string& dir) {
  std::istringstream in(
      "dataset = synthetic\n"
      "num_clients = 4, 6\n"
      "methods = or-shapley, or-lc, loo, loo-linear, reputation, lambda-mr, fed-shapley\n"
      "model = mlp\nhidden_units = 64\ndropout = 0.5\n"
      "lr = 0.01\nmomentum = 0.5\nrounds = 5\nlocal_epochs = 10\n"
      "synth_classes = 10\nsynth_dim = 20\nsynth_train_per_client = 1000\nsynth_test_per_class = 100\n"
      "synth_separation = 1.0\n");
  auto cfg = fedce::parse_config(in);
  cfg.output_dir = dir;
  return cfg;
}

// 7. Payoff falls with noise for every method; Reputation is the most uniform.
void monotonicity() {
  const auto start = Clock::now();
  const auto cfg = monotonicity_config(scratch("monotonicity").string());
  fedce::run_experiment(cfg);
  const auto rows = fedce::emit_report(cfg.output_dir);
  const double t = since(start);
  bool ok = t < 600.0;
  std::string detail;
  for (int n : cfg.client_counts) {
    double worst_sp = -1.0, best_other = 1e9, rep = 1e9;
    std::string worst_method, closest;
    for (const auto& m : cfg.methods) {
      const auto* r = row_for(rows, n, m);
      if (!r || r->ok != cfg.seeds.size()) {
        ok = false;
        continue;
      }
      if (r->spearman_median > worst_sp) {
        worst_sp = r->spearman_median;
        worst_method = m;
      }
      if (m == "reputation") {
        rep = r->dist;
      } else if (r->dist < best_other) {
        best_other = r->dist;
        closest = m;
      }
    }
    ok = ok && worst_sp <= -0.8 && rep < best_other;
    detail += fmt("n=%d: max median spearman %.3f (%s), reputation dist %.4f vs next %.4f (%s); ", n, worst_sp,
                  worst_method.c_str(), rep, best_other, closest.c_str());
  }
  detail += fmt("%.0f s", t);
  report(7, ok, "payoff falls with noise on synthetic data, n in {4, 6}, 5 seeds, 7 methods", detail);
}

// 8. OR-LC budget, least-core membership, and agreement with enumeration.
void or_lc_properties() {
  double budget_err = 0.0, eps_err = 0.0, pay_err = 0.0;
  int members = 0, games = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto f = fixture::synth({0.0, 0.4, 0.8}, 80, 500 + seed, 1, 3);
    const auto logs = fedce::run_federation(f.clients, f.cfg, f.test);
    const auto v = oracle::direct_utilities(logs, f.test, 1);
    const auto game = Game::from_table(3, v);
    const auto lc = fedce::or_least_core(logs, f.test);
    const auto expect = fedce::least_core(game);
    budget_err = std::max(budget_err, std::abs(lc.payoff.sum() - v.back()));
    eps_err = std::max(eps_err, std::abs(lc.epsilon_star - expect.epsilon_star));
    for (std::size_t i = 0; i < 3; ++i) pay_err = std::max(pay_err, std::abs(lc.payoff[i] - expect.payoff[i]));
    members += fedce::core_membership(game, lc.payoff, lc.epsilon_star + 1e-7).member;
    ++games;
  }
  // Multi-round, five clients: budget and membership against the enumerated pseudo-model game.
  const auto f = fixture::synth({0.0, 0.2, 0.4, 0.6, 0.8}, 60, 77);
  const auto logs = fedce::run_federation(f.clients, f.cfg, f.test);
  const auto v = oracle::direct_utilities(logs, f.test, logs.size());
  const auto lc = fedce::or_least_core(logs, f.test);
  budget_err = std::max(budget_err, std::abs(lc.payoff.sum() - v.back()));
  members += fedce::core_membership(Game::from_table(5, v), lc.payoff, lc.epsilon_star + 1e-7).member;
  ++games;
  const bool ok = budget_err < 1e-7 && eps_err < 1e-7 && pay_err < 1e-7 && members == games;
  report(8, ok, "OR-LC budget, core membership at eps*+1e-7, 3-client one-round enumeration",
         fmt("budget err %.1e, eps* err %.1e, payoff err %.1e, %d/%d members", budget_err, eps_err, pay_err, members,
             games));
}

// 9. Normalization geometry for two clients.
void normalization_geometry() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.5, 2.0);
  double err = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto x = fedce::normalize_payoffs(fedce::PayoffVector{u(rng), u(rng)}).values;
    err = std::max(err, std::abs(fedce::dist_to_uniform(x) - fedce::max_dif(x) / std::sqrt(2.0)));
  }
  const auto a = fedce::normalize_payoffs(fedce::PayoffVector{0.96, 0.04}).values;
  const auto b = fedce::normalize_payoffs(fedce::PayoffVector{0.99, 0.01}).values;
  const bool pairs = std::abs(fedce::max_dif(a) - 0.92) < 1e-9 && std::abs(fedce::dist_to_uniform(a) - 0.65) < 0.005 &&
                     std::abs(fedce::max_dif(b) - 0.98) < 1e-9 && std::abs(fedce::dist_to_uniform(b) - 0.69) < 0.005;
  report(9, err < 1e-9 && pairs, "n=2 dist = max_dif / sqrt(2), reference pairs 0.92/0.65 and 0.98/0.69",
         fmt("max |dist - d/sqrt2| %.1e; pairs %.2f/%.4f, %.2f/%.4f", err, fedce::max_dif(a),
             fedce::dist_to_uniform(a), fedce::max_dif(b), fedce::dist_to_uniform(b)));
}

// 10. Identical configs give byte-identical payoff files, sequential or parallel seeds.
void determinism() {
  auto cfg = monotonicity_config(scratch("determinism").string());
  cfg.client_counts = {4};
  cfg.seeds = {0, 1, 2};
  cfg.synth.train_per_client = 300;
  cfg.methods.push_back("truncated-mr");
  fedce::run_experiment(cfg);
  const auto first = slurp(fs::path(cfg.output_dir) / "payoffs.csv");
  fedce::run_experiment(cfg);
  const auto second = slurp(fs::path(cfg.output_dir) / "payoffs.csv");
  cfg.parallel_seeds = true;
  fedce::run_experiment(cfg);
  const auto third = slurp(fs::path(cfg.output_dir) / "payoffs.csv");
  report(10, !first.empty() && first == second && first == third, "rerun gives byte-identical payoffs.csv",
         fmt("%zu bytes; rerun %s, parallel seeds %s", first.size(), first == second ? "identical" : "DIFFERENT",
             first == third ? "identical" : "DIFFERENT"));
}

}  // namespace

int main() {
  axioms();
  oracle_equivalence();
  mc_convergence();
  mc_least_core_audit();
  gradient_check();
  mnist_replication();
  monotonicity();
  or_lc_properties();
  normalization_geometry();
  determinism();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
