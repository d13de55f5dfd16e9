// fedce: experiment runner, report writer and direct game solver.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "fedce/bench.hpp"
#include "fedce/core.hpp"
#include "fedce/game.hpp"
#include "fedce/shapley.hpp"

namespace {

void print_payoff(const fedce::PayoffVector& x) {
  for (std::size_t i = 0; i < x.size(); ++i) std::printf("x[%zu] = %.10g\n", i, x[i] + 0.0);
  std::printf("sum = %.10g\n", x.sum());
}

int run(const std::string& config) {
  const auto cfg = fedce::load_config(config);
  const auto result = fedce::run_experiment(cfg);
  std::size_t skipped = 0;
  for (const auto& r : result.records) {
    if (!r.ok) {
      ++skipped;
      std::fprintf(stderr, "skipped n=%d %s seed %llu: %s\n", r.clients, r.method.c_str(),
                   static_cast<unsigned long long>(r.seed), r.reason.c_str());
    }
  }
  std::printf("%zu runs (%zu skipped) written to %s\n", result.records.size(), skipped, result.output_dir.c_str());
  std::ifstream summary(result.output_dir / "report" / "summary.txt");
  std::cout << summary.rdbuf();
  return 0;
}

int solve(const std::string& path, const std::string& method, std::size_t samples, std::uint64_t seed) {
  const auto game = fedce::load_game_file(path);
  const int n = game.players();
  if (method == "shapley") {
    print_payoff(fedce::shapley_exact(game));
  } else if (method == "shapley-mc") {
    fedce::PermutationSampler sampler(seed, n);
    print_payoff(fedce::shapley_monte_carlo(game, sampler, samples));
  } else if (method == "least-core" || method == "least-core-mc") {
    fedce::LeastCoreSolution sol;
    if (method == "least-core") {
      sol = fedce::least_core(game);
    } else {
      fedce::McLeastCoreParams params;
      params.sample_count = samples;
      fedce::CoalitionSampler sampler(seed, n);
      sol = fedce::least_core_monte_carlo(game, params, sampler);
    }
    print_payoff(sol.payoff);
    std::printf("epsilon* = %.10g\ncore %s\n", sol.epsilon_star, sol.core_nonempty ? "nonempty" : "empty");
  } else if (method == "nucleolus") {
    const auto nuc = fedce::nucleolus(game);
    print_payoff(nuc.payoff);
    std::printf("epsilon* = %.10g\n", nuc.least_core_epsilon);
  } else {
    throw fedce::ConfigError("unknown solver '" + method + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contribution evaluation for simulated federated learning"};
  app.require_subcommand(1);

  std::string config;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment from a config file");
  run_cmd->add_option("--config", config, "key = value config file")->required()->check(CLI::ExistingFile);

  std::string results;
  auto* report_cmd = app.add_subcommand("report", "Rebuild the report from a results directory");
  report_cmd->add_option("--results", results, "Directory holding runs.csv and payoffs.csv")->required();

  std::string game_file, method = "shapley";
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  auto* game_cmd = app.add_subcommand("game", "Cooperative game tools");
  game_cmd->require_subcommand(1);
  auto* solve_cmd = game_cmd->add_subcommand("solve", "Solve a game given as a utility table");
  solve_cmd->add_option("--game-file", game_file, "Game file: n, then '<hex mask> <value>' lines")
      ->required()
      ->check(CLI::ExistingFile);
  solve_cmd->add_option("--method", method, "Solution concept")
      ->check(CLI::IsMember({"shapley", "shapley-mc", "least-core", "least-core-mc", "nucleolus"}));
  solve_cmd->add_option("--samples", samples, "Permutations or coalitions drawn by the sampling methods");
  solve_cmd->add_option("--seed", seed, "Sampler seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return run(config);
    if (*report_cmd) {
      const auto rows = fedce::emit_report(results);
      std::printf("%zu metric rows written to %s/report\n", rows.size(), results.c_str());
      return 0;
    }
    if (*solve_cmd) {
      if (samples == 0) samples = method == "shapley-mc" ? 10000 : 0;
      return solve(game_file, method, samples, seed);
    }
  } catch (const fedce::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
