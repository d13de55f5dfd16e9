#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fedce/ce.hpp"
#include "fedce/core.hpp"
#include "fedce/data.hpp"
#include "fedce/flsim.hpp"
#include "fedce/game.hpp"
#include "fedce/shapley.hpp"

namespace fedce {

// Method names accepted in configs, in report order.
inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> names{"or-shapley",   "or-lc",        "loo",           "loo-linear",
                                              "reputation",   "lambda-mr",    "fed-shapley",   "truncated-mr",
                                              "exact-shapley", "exact-lc"};
  return names;
}

enum class DatasetKind { Mnist, Synthetic, GameFile };

struct SyntheticParams {
  std::size_t classes = 10;
  std::size_t dim = 20;
  std::size_t train_per_client = 300;
  std::size_t test_per_class = 100;
  double separation = 1.0;
};

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::Synthetic;
  std::string mnist_dir = "data/mnist";
  std::string game_file;
  std::vector<int> client_counts{2};
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  FederationConfig federation;
  bool logistic = false;
  // Empty means NoisePlan::linear(n).
  std::vector<double> noise_rates;
  // Per-client training samples; 0 uses equal shards of the whole train set.
  std::size_t shard_size = 0;
  // Test samples kept; 0 keeps all.
  std::size_t test_size = 0;
  SyntheticParams synth;
  MrConfig mr{0.8, 0.5, false};
  std::size_t memory_cap_mb = kDefaultBankCap >> 20;
  // Exact methods retrain 2^n - 1 federations; larger n is skipped.
  int retrain_max_clients = 6;
  unsigned threads = 1;
  bool parallel_seeds = false;
  bool dump_logs = false;
  std::string output_dir = "results";

  void validate() const {
    if (methods.empty()) throw ConfigError("methods must not be empty");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (client_counts.empty()) throw ConfigError("num_clients must not be empty");
    for (const auto& m : methods) {
      if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
        throw ConfigError("unknown method '" + m + "'");
      }
    }
    for (int n : client_counts) {
      if (n < 1 || n > 16) throw ConfigError("num_clients must be in [1, 16]");
      if (!noise_rates.empty() && noise_rates.size() != static_cast<std::size_t>(n)) {
        throw ConfigError("noise list needs one rate per client");
      }
    }
    for (double r : noise_rates) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise rates must be in [0, 1]");
    }
    if (dataset == DatasetKind::GameFile && game_file.empty()) throw ConfigError("dataset game-file needs game_file");
  }

  std::vector<double> noise_for(int n) const {
    return noise_rates.empty() ? NoisePlan::linear(n).rates : noise_rates;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  if (!(in >> value) || !(in >> std::ws).eof()) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + text + "'");
}

}  // namespace detail

// Flat "key = value" lines, '#' comments, comma-separated lists.
inline ExperimentConfig parse_config(std::istream& in) {
  using detail::parse_number;
  ExperimentConfig cfg;
  std::string model = "mlp";
  std::size_t hidden = 64;
  double dropout = 0.5;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "dataset") {
      if (value == "mnist") cfg.dataset = DatasetKind::Mnist;
      else if (value == "synthetic") cfg.dataset = DatasetKind::Synthetic;
      else if (value == "game-file") cfg.dataset = DatasetKind::GameFile;
      else throw ConfigError("unknown dataset '" + value + "'");
    } else if (key == "mnist_dir") {
      cfg.mnist_dir = value;
    } else if (key == "game_file") {
      cfg.game_file = value;
    } else if (key == "num_clients") {
      cfg.client_counts.clear();
      for (const auto& v : detail::split_list(value)) cfg.client_counts.push_back(parse_number<int>(key, v));
    } else if (key == "methods") {
      cfg.methods = detail::split_list(value);
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const auto& v : detail::split_list(value)) cfg.seeds.push_back(parse_number<std::uint64_t>(key, v));
    } else if (key == "noise") {
      cfg.noise_rates.clear();
      if (value != "linear") {
        for (const auto& v : detail::split_list(value)) cfg.noise_rates.push_back(parse_number<double>(key, v));
      }
    } else if (key == "rounds") {
      cfg.federation.num_rounds = parse_number<std::size_t>(key, value);
    } else if (key == "local_epochs") {
      cfg.federation.local_epochs = parse_number<std::size_t>(key, value);
    } else if (key == "lr") {
      cfg.federation.optimizer.lr = parse_number<double>(key, value);
    } else if (key == "momentum") {
      cfg.federation.optimizer.momentum = parse_number<double>(key, value);
    } else if (key == "batch_size") {
      cfg.federation.optimizer.batch_size = parse_number<std::size_t>(key, value);
    } else if (key == "optimizer") {
      if (value == "sgd") cfg.federation.optimizer.optimizer = Optimizer::Sgd;
      else if (value == "adam") cfg.federation.optimizer.optimizer = Optimizer::Adam;
      else throw ConfigError("unknown optimizer '" + value + "'");
    } else if (key == "model") {
      if (value != "mlp" && value != "logistic") throw ConfigError("unknown model '" + value + "'");
      model = value;
    } else if (key == "hidden_units") {
      hidden = parse_number<std::size_t>(key, value);
    } else if (key == "dropout") {
      dropout = parse_number<double>(key, value);
    } else if (key == "shard_size") {
      cfg.shard_size = parse_number<std::size_t>(key, value);
    } else if (key == "test_size") {
      cfg.test_size = parse_number<std::size_t>(key, value);
    } else if (key == "synth_classes") {
      cfg.synth.classes = parse_number<std::size_t>(key, value);
    } else if (key == "synth_dim") {
      cfg.synth.dim = parse_number<std::size_t>(key, value);
    } else if (key == "synth_train_per_client") {
      cfg.synth.train_per_client = parse_number<std::size_t>(key, value);
    } else if (key == "synth_test_per_class") {
      cfg.synth.test_per_class = parse_number<std::size_t>(key, value);
    } else if (key == "synth_separation") {
      cfg.synth.separation = parse_number<double>(key, value);
    } else if (key == "lambda") {
      cfg.mr.lambda = parse_number<double>(key, value);
    } else if (key == "truncation_threshold") {
      cfg.mr.truncation_threshold = parse_number<double>(key, value);
    } else if (key == "memory_cap_mb") {
      cfg.memory_cap_mb = parse_number<std::size_t>(key, value);
    } else if (key == "retrain_max_clients") {
      cfg.retrain_max_clients = parse_number<int>(key, value);
    } else if (key == "threads") {
      cfg.threads = parse_number<unsigned>(key, value);
    } else if (key == "parallel_seeds") {
      cfg.parallel_seeds = detail::parse_bool(key, value);
    } else if (key == "dump_logs") {
      cfg.dump_logs = detail::parse_bool(key, value);
    } else if (key == "output_dir") {
      cfg.output_dir = value;
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.logistic = model == "logistic";
  cfg.federation.model.hidden_units = cfg.logistic ? 0 : hidden;
  cfg.federation.model.dropout_p = cfg.logistic ? 0.0 : dropout;
  cfg.federation.threads = cfg.threads;
  cfg.validate();
  return cfg;
}

// FEDCE_OUTPUT_DIR and FEDCE_MEMORY_CAP_MB override the file.
inline void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* dir = std::getenv("FEDCE_OUTPUT_DIR"); dir != nullptr && *dir != '\0') cfg.output_dir = dir;
  if (const char* cap = std::getenv("FEDCE_MEMORY_CAP_MB"); cap != nullptr && *cap != '\0') {
    cfg.memory_cap_mb = detail::parse_number<std::size_t>("FEDCE_MEMORY_CAP_MB", cap);
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  auto cfg = parse_config(in);
  apply_env_overrides(cfg);
  return cfg;
}

struct NormalizedPayoff {
  PayoffVector values;
  bool fallback_uniform = false;
};

// Negatives clipped to zero, then scaled to sum to one; uniform when nothing
// positive is left.
inline NormalizedPayoff normalize_payoffs(const PayoffVector& raw) {
  if (raw.size() == 0) throw InvalidArgument("cannot normalize an empty payoff vector");
  NormalizedPayoff out{PayoffVector(raw.size()), false};
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out.values[i] = std::max(0.0, raw[i]);
    total += out.values[i];
  }
  if (!(total > 0.0)) {
    out.values = PayoffVector(raw.size(), 1.0 / static_cast<double>(raw.size()));
    out.fallback_uniform = true;
    return out;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) out.values[i] /= total;
  return out;
}

inline double max_dif(const PayoffVector& x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *hi - *lo;
}

inline double dist_to_uniform(const PayoffVector& x) {
  const double u = 1.0 / static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - u) * (v - u);
  return std::sqrt(s);
}

// Spearman correlation with average ranks for ties; 0 when either side is constant.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman needs two equal-length series");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size();) {
      std::size_t e = k;
      while (e + 1 < idx.size() && v[idx[e + 1]] == v[idx[k]]) ++e;
      const double avg = 0.5 * static_cast<double>(k + e) + 1.0;
      for (std::size_t q = k; q <= e; ++q) r[idx[q]] = avg;
      k = e + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// One (client count, method, seed) evaluation.
struct RunRecord {
  int clients = 0;
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string reason;
  std::vector<double> noise;
  PayoffVector raw;
  PayoffVector normalized;
  bool fallback_uniform = false;
  double acc = 0.0;
  double max_dif = 0.0;
  double dist = 0.0;
  double budget = 0.0;
  double spearman = 0.0;
  double t_method = 0.0;
  double t_train = 0.0;
};

// Clients and test split for one (seed, n); also the shared federation input.
struct SeedSetup {
  std::vector<ClientState> clients;
  EvalSet test;
  FederationConfig federation;
};

namespace detail {

inline const EvalSet& cached_mnist(const std::string& dir, bool train) {
  static std::mutex mutex;
  static std::map<std::pair<std::string, bool>, EvalSet> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find({dir, train});
  if (it == cache.end()) it = cache.emplace(std::make_pair(dir, train), load_mnist(dir, train)).first;
  return it->second;
}

}  // namespace detail

inline SeedSetup build_setup(const ExperimentConfig& cfg, int n, std::uint64_t seed) {
  SeedSetup s;
  s.federation = cfg.federation;
  s.federation.seed = seed;
  const auto noise = cfg.noise_for(n);
  std::vector<EvalSet> shards;
  std::size_t classes = 10;
  if (cfg.dataset == DatasetKind::Mnist) {
    const auto& train = detail::cached_mnist(cfg.mnist_dir, true);
    const auto& test = detail::cached_mnist(cfg.mnist_dir, false);
    s.test = cfg.test_size > 0 ? split_at(test, std::min(cfg.test_size, test.size())).first : test;
    shards = partition_iid(train, n, derive_seed(seed, 11));
    s.federation.model.input_dim = train.dim;
  } else if (cfg.dataset == DatasetKind::Synthetic) {
    const auto& p = cfg.synth;
    classes = p.classes;
    const std::size_t train_total = p.train_per_client * static_cast<std::size_t>(n);
    const std::size_t per_class = p.test_per_class + (train_total + p.classes - 1) / p.classes;
    const auto all = synth_dataset(p.classes, p.dim, per_class, p.separation, derive_seed(seed, 13));
    auto [test, train] = split_at(all, p.test_per_class * p.classes);
    s.test = std::move(test);
    shards = partition_iid(train, n, derive_seed(seed, 11));
    s.federation.model.input_dim = p.dim;
  } else {
    throw InvalidArgument("game-file experiments have no federation");
  }
  s.federation.model.num_classes = classes;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    EvalSet mine = std::move(shards[k]);
    const std::size_t keep = cfg.dataset == DatasetKind::Synthetic ? cfg.synth.train_per_client : cfg.shard_size;
    if (keep > 0 && keep < mine.size()) mine = split_at(mine, keep).first;
    s.clients.push_back({static_cast<int>(k), inject_noise(mine, noise[k], classes, derive_seed(seed, 12, k)), noise[k]});
  }
  return s;
}

// Raw payoff of one method on shared round logs (and, for the exact methods,
// coalition retraining on the same setup).
inline PayoffVector compute_method(const std::string& method, const ExperimentConfig& cfg, const SeedSetup& setup,
                                   const std::vector<RoundLog>& logs) {
  CeOptions ce;
  ce.memory_cap_bytes = cfg.memory_cap_mb << 20;
  ce.threads = cfg.threads;
  const auto& test = setup.test;
  if (method == "or-shapley") return or_shapley(logs, test, ce);
  if (method == "or-lc") return or_least_core(logs, test, ce).payoff;
  if (method == "loo") return round_loo(logs, test, LooWeighting::None, cfg.threads);
  if (method == "loo-linear") return round_loo(logs, test, LooWeighting::Linear, cfg.threads);
  if (method == "reputation") return reputation(logs, test, cfg.threads);
  if (method == "lambda-mr") return lambda_mr(logs, test, cfg.mr, ce);
  if (method == "fed-shapley") return federated_shapley(logs, test, ce).total;
  if (method == "truncated-mr") {
    auto mr = cfg.mr;
    if (!mr.truncation_threshold) mr.truncation_threshold = 0.5;
    return truncated_mr(logs, test, mr, ce);
  }
  const int n = static_cast<int>(setup.clients.size());
  if (n > cfg.retrain_max_clients) {
    throw PlayerCountExceeded(n, cfg.retrain_max_clients, method + " coalition retraining");
  }
  const double v0 = evaluate(logs.front().global_before, test);
  Game game(n, [&](Coalition s) {
    return s.is_empty() ? 0.0 : retrain_coalition(s, setup.clients, setup.federation, test) - v0;
  });
  if (method == "exact-shapley") return shapley_exact(game);
  if (method == "exact-lc") return least_core(game).payoff;
  throw ConfigError("unknown method '" + method + "'");
}

inline void fill_metrics(RunRecord& r) {
  const auto norm = normalize_payoffs(r.raw);
  r.normalized = norm.values;
  r.fallback_uniform = norm.fallback_uniform;
  r.max_dif = max_dif(r.normalized);
  r.dist = dist_to_uniform(r.normalized);
  r.budget = r.raw.sum();
  r.spearman = r.raw.size() >= 2 ? spearman(r.noise, r.normalized.values()) : 0.0;
  r.ok = true;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

inline std::vector<RunRecord> run_seed(const ExperimentConfig& cfg, int n, std::uint64_t seed) {
  std::vector<RunRecord> out;
  auto base = [&](const std::string& method) {
    RunRecord r;
    r.clients = n;
    r.method = method;
    r.seed = seed;
    return r;
  };
  if (cfg.dataset == DatasetKind::GameFile) {
    const auto game = load_game_file(cfg.game_file).normalized();
    for (const auto& method : cfg.methods) {
      auto r = base(method);
      r.noise.assign(static_cast<std::size_t>(game.players()), 0.0);
      r.clients = game.players();
      r.acc = game.grand_value();
      const auto start = Clock::now();
      try {
        if (method == "exact-shapley") r.raw = shapley_exact(game);
        else if (method == "exact-lc") r.raw = least_core(game).payoff;
        else throw InvalidArgument("needs federation round logs");
        r.t_method = seconds_since(start);
        fill_metrics(r);
      } catch (const Error& e) {
        r.reason = e.what();
      }
      out.push_back(std::move(r));
    }
    return out;
  }
  const auto setup = build_setup(cfg, n, seed);
  const auto start_train = Clock::now();
  const auto logs = run_federation(setup.clients, setup.federation, setup.test);
  const double t_train = seconds_since(start_train);
  if (cfg.dump_logs) {
    dump_round_logs(logs, std::filesystem::path(cfg.output_dir) / "logs" /
                              ("n" + std::to_string(n) + "_seed" + std::to_string(seed)));
  }
  for (const auto& method : cfg.methods) {
    auto r = base(method);
    for (const auto& c : setup.clients) r.noise.push_back(c.noise_rate);
    r.acc = logs.back().test_acc_after;
    r.t_train = t_train;
    const auto start = Clock::now();
    try {
      r.raw = compute_method(method, cfg, setup, logs);
      r.t_method = seconds_since(start);
      fill_metrics(r);
    } catch (const MemoryBudgetExceeded& e) {
      r.reason = std::string("memory budget: ") + e.what();
    } catch (const PlayerCountExceeded& e) {
      r.reason = std::string("player cap: ") + e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

}  // namespace detail

struct ExperimentResult {
  std::filesystem::path output_dir;
  std::vector<RunRecord> records;
};

// Aggregated row of runs.csv over seeds.
struct MetricsRow {
  int clients = 0;
  std::string method;
  std::size_t seeds = 0;
  std::size_t ok = 0;
  double acc = 0, acc_std = 0, max_dif = 0, max_dif_std = 0, dist = 0, dist_std = 0;
  double budget = 0, budget_std = 0, spearman_median = 0;
  double t_method = 0, t_method_std = 0, t_method_total = 0, t_train = 0;
  std::string reason;
};

// Plot-data row: mean normalized payoff per client over seeds.
struct CurvePoint {
  int clients = 0;
  std::string method;
  int client = 0;
  double noise_rate = 0.0;
  double normalized = 0.0;
};

inline std::vector<MetricsRow> aggregate_records(const std::vector<RunRecord>& records) {
  std::map<std::pair<int, std::size_t>, std::vector<const RunRecord*>> groups;
  auto method_rank = [](const std::string& m) {
    const auto& names = known_methods();
    return static_cast<std::size_t>(std::find(names.begin(), names.end(), m) - names.begin());
  };
  for (const auto& r : records) groups[{r.clients, method_rank(r.method)}].push_back(&r);
  std::vector<MetricsRow> out;
  for (const auto& [key, runs] : groups) {
    MetricsRow row;
    row.clients = key.first;
    row.method = runs.front()->method;
    row.seeds = runs.size();
    std::vector<double> acc, md, dist, budget, sp, tm;
    for (const auto* r : runs) {
      if (!r->ok) {
        if (row.reason.empty()) row.reason = r->reason;
        continue;
      }
      acc.push_back(r->acc);
      md.push_back(r->max_dif);
      dist.push_back(r->dist);
      budget.push_back(r->budget);
      sp.push_back(r->spearman);
      tm.push_back(r->t_method);
      row.t_train += r->t_train;
    }
    row.ok = acc.size();
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
      if (v.empty()) {
        mean = sd = std::nan("");
        return;
      }
      mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double s = 0.0;
      for (double x : v) s += (x - mean) * (x - mean);
      sd = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
    };
    mean_std(acc, row.acc, row.acc_std);
    mean_std(md, row.max_dif, row.max_dif_std);
    mean_std(dist, row.dist, row.dist_std);
    mean_std(budget, row.budget, row.budget_std);
    mean_std(tm, row.t_method, row.t_method_std);
    row.t_method_total = std::accumulate(tm.begin(), tm.end(), 0.0);
    row.t_train = row.ok > 0 ? row.t_train / static_cast<double>(row.ok) : std::nan("");
    row.spearman_median = median(sp);
    out.push_back(std::move(row));
  }
  return out;
}

inline std::vector<CurvePoint> curve_points(const std::vector<RunRecord>& records) {
  std::map<std::tuple<int, std::string, int>, std::pair<double, std::size_t>> sums;
  std::map<std::tuple<int, std::string, int>, double> noise;
  for (const auto& r : records) {
    if (!r.ok) continue;
    for (std::size_t i = 0; i < r.normalized.size(); ++i) {
      const auto key = std::make_tuple(r.clients, r.method, static_cast<int>(i));
      sums[key].first += r.normalized[i];
      sums[key].second += 1;
      noise[key] = r.noise[i];
    }
  }
  std::vector<CurvePoint> out;
  for (const auto& [key, s] : sums) {
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), noise[key],
                   s.first / static_cast<double>(s.second)});
  }
  return out;
}

// Deterministic part of the output: payoffs ordered by (clients, method, seed, client).
inline void write_payoffs_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "clients,method,seed,client,noise_rate,raw,normalized\n";
  for (const auto& r : records) {
    if (!r.ok) continue;
    for (std::size_t i = 0; i < r.raw.size(); ++i) {
      out << r.clients << ',' << r.method << ',' << r.seed << ',' << i << ',' << r.noise[i] << ',' << r.raw[i] << ','
          << r.normalized[i] << '\n';
    }
  }
}

inline void write_runs_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "clients,method,seed,status,acc,max_dif,dist,budget,spearman,t_method,t_train,reason\n";
  for (const auto& r : records) {
    out << r.clients << ',' << r.method << ',' << r.seed << ',' << (r.ok ? "ok" : "skipped") << ',' << r.acc << ','
        << r.max_dif << ',' << r.dist << ',' << r.budget << ',' << r.spearman << ',' << r.t_method << ','
        << r.t_train << ',' << detail::csv_safe(r.reason) << '\n';
  }
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::size_t columns) {
  std::ifstream in(path);
  if (!in) throw MissingResults("missing " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != columns) throw MissingResults("malformed row in " + path.string());
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace detail

// Rebuilds records from runs.csv and payoffs.csv.
inline std::vector<RunRecord> load_records(const std::filesystem::path& dir) {
  std::vector<RunRecord> records;
  std::map<std::tuple<int, std::string, std::uint64_t>, std::size_t> index;
  for (const auto& row : detail::read_csv(dir / "runs.csv", 12)) {
    RunRecord r;
    r.clients = std::stoi(row[0]);
    r.method = row[1];
    r.seed = std::stoull(row[2]);
    r.ok = row[3] == "ok";
    r.acc = std::stod(row[4]);
    r.max_dif = std::stod(row[5]);
    r.dist = std::stod(row[6]);
    r.budget = std::stod(row[7]);
    r.spearman = std::stod(row[8]);
    r.t_method = std::stod(row[9]);
    r.t_train = std::stod(row[10]);
    r.reason = row[11];
    index[{r.clients, r.method, r.seed}] = records.size();
    records.push_back(std::move(r));
  }
  for (const auto& row : detail::read_csv(dir / "payoffs.csv", 7)) {
    const auto it = index.find({std::stoi(row[0]), row[1], std::stoull(row[2])});
    if (it == index.end()) throw MissingResults("payoff row without a run in " + dir.string());
    auto& r = records[it->second];
    r.noise.push_back(std::stod(row[4]));
    r.raw.raw().push_back(std::stod(row[5]));
    r.normalized.raw().push_back(std::stod(row[6]));
  }
  return records;
}

// Writes report/metrics_n<k>.csv per client count, report/curve.csv and
// report/summary.txt.
inline std::vector<MetricsRow> emit_report(const std::filesystem::path& results_dir) {
  const auto records = load_records(results_dir);
  if (records.empty()) throw MissingResults("no runs recorded in " + results_dir.string());
  const auto rows = aggregate_records(records);
  const auto report = results_dir / "report";
  std::filesystem::create_directories(report);
  std::map<int, std::vector<const MetricsRow*>> by_n;
  for (const auto& row : rows) by_n[row.clients].push_back(&row);
  for (const auto& [n, list] : by_n) {
    auto out = detail::open_out(report / ("metrics_n" + std::to_string(n) + ".csv"));
    out << "method,status,seeds,acc,acc_std,max_dif,max_dif_std,dist,dist_std,budget,budget_std,spearman_median,"
           "t_method,t_method_std,t_method_total,t_train,reason\n";
    for (const auto* r : list) {
      out << r->method << ',' << (r->ok > 0 ? "ok" : "skipped") << ',' << r->ok << ',' << r->acc << ',' << r->acc_std
          << ',' << r->max_dif << ',' << r->max_dif_std << ',' << r->dist << ',' << r->dist_std << ',' << r->budget
          << ',' << r->budget_std << ',' << r->spearman_median << ',' << r->t_method << ',' << r->t_method_std << ','
          << r->t_method_total << ',' << r->t_train << ',' << detail::csv_safe(r->reason) << '\n';
    }
  }
  {
    auto out = detail::open_out(report / "curve.csv");
    out << "noise_rate,normalized_payoff,method,clients,client\n";
    for (const auto& p : curve_points(records)) {
      out << p.noise_rate << ',' << p.normalized << ',' << p.method << ',' << p.clients << ',' << p.client << '\n';
    }
  }
  std::ofstream summary(report / "summary.txt");
  if (!summary) throw IoError("cannot write summary");
  double total = 0.0;
  for (const auto& [n, list] : by_n) {
    summary << "clients = " << n << '\n'
            << std::left << std::setw(15) << "method" << std::right << std::setw(8) << "acc" << std::setw(9)
            << "max_dif" << std::setw(8) << "dist" << std::setw(10) << "t[s]" << std::setw(9) << "B" << std::setw(10)
            << "spearman" << "  note\n";
    for (const auto* r : list) {
      summary << std::left << std::setw(15) << r->method << std::right << std::fixed << std::setprecision(4);
      if (r->ok > 0) {
        summary << std::setw(8) << r->acc << std::setw(9) << r->max_dif << std::setw(8) << r->dist << std::setw(10)
                << r->t_method << std::setw(9) << r->budget << std::setw(10) << r->spearman_median;
      } else {
        summary << std::setw(54) << "-";
      }
      if (r->ok < r->seeds) summary << "  skipped: " << r->reason;
      summary << '\n' << std::defaultfloat;
      total += r->t_method_total;
    }
    summary << '\n';
  }
  summary << std::setprecision(6) << "total method seconds: " << total << '\n';
  return rows;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.output_dir = cfg.output_dir;
  std::filesystem::create_directories(result.output_dir);
  for (int n : cfg.client_counts) {
    std::vector<std::vector<RunRecord>> per_seed(cfg.seeds.size());
    if (cfg.parallel_seeds) {
      detail::parallel_for(cfg.seeds.size(), static_cast<unsigned>(cfg.seeds.size()),
                           [&](std::size_t k) { per_seed[k] = detail::run_seed(cfg, n, cfg.seeds[k]); });
    } else {
      for (std::size_t k = 0; k < cfg.seeds.size(); ++k) per_seed[k] = detail::run_seed(cfg, n, cfg.seeds[k]);
    }
    for (auto& runs : per_seed) {
      for (auto& r : runs) result.records.push_back(std::move(r));
    }
    if (cfg.dataset == DatasetKind::GameFile) break;
  }
  std::stable_sort(result.records.begin(), result.records.end(), [](const RunRecord& a, const RunRecord& b) {
    const auto& names = known_methods();
    const auto ra = std::find(names.begin(), names.end(), a.method) - names.begin();
    const auto rb = std::find(names.begin(), names.end(), b.method) - names.begin();
    return std::tie(a.clients, ra, a.seed) < std::tie(b.clients, rb, b.seed);
  });
  write_payoffs_csv(result.records, result.output_dir / "payoffs.csv");
  write_runs_csv(result.records, result.output_dir / "runs.csv");
  emit_report(result.output_dir);
  return result;
}

}  // namespace fedce
