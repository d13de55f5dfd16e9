#pragma once

#include <algorithm>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedce/coalition.hpp"
#include "fedce/errors.hpp"
#include "fedce/learn.hpp"
#include "fedce/rng.hpp"

namespace fedce {

struct ClientState {
  int id = 0;
  EvalSet dataset;
  double noise_rate = 0.0;

  std::size_t size() const { return dataset.size(); }
};

struct FederationConfig {
  std::size_t num_rounds = 5;
  std::size_t local_epochs = 10;
  SgdConfig optimizer;
  std::uint64_t seed = 0;
  ModelSpec model;
  // Train the clients of one round on separate threads.
  unsigned threads = 1;
  // Every client trains with the same per-round seed. Only useful in tests.
  bool shared_client_seed = false;

  void validate() const {
    if (num_rounds < 1) throw InvalidArgument("num_rounds must be at least 1");
    model.validate();
    optimizer.validate();
  }
};

// One FedAvg round. Vectors indexed by client position are sized n; entries
// of clients outside participants are left empty.
struct RoundLog {
  int t = 0;
  ParamVector global_before;
  std::vector<ParamVector> local_updates;
  Coalition participants;
  std::vector<std::size_t> sizes;
  ParamVector global_after;
  double test_acc_after = 0.0;

  int players() const { return participants.players(); }
};

inline std::uint64_t client_seed(const FederationConfig& cfg, int round, int client_id) {
  if (cfg.shared_client_seed) return derive_seed(cfg.seed, static_cast<std::uint64_t>(round));
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client_id));
}

// global_before + sum_i (n_i / sum_{j in members} n_j) * delta_i over members.
// Members are visited in increasing position, so the reduction order is fixed.
inline ParamVector aggregate(const ParamVector& base, const std::vector<ParamVector>& deltas,
                             const std::vector<std::size_t>& sizes, Coalition members) {
  ParamVector out = base;
  double total = 0.0;
  for (int i : members.members()) total += static_cast<double>(sizes[static_cast<std::size_t>(i)]);
  if (total == 0.0) return out;
  for (int i : members.members()) {
    const auto k = static_cast<std::size_t>(i);
    out.axpy(static_cast<double>(sizes[k]) / total, deltas[k]);
  }
  return out;
}

inline std::vector<RoundLog> run_federation(const std::vector<ClientState>& clients, const FederationConfig& cfg,
                                            const EvalSet& test) {
  if (clients.empty()) throw InvalidArgument("federation needs at least one client");
  cfg.validate();
  const int n = static_cast<int>(clients.size());
  for (const auto& c : clients) {
    if (c.size() == 0) throw EmptyDataset("client " + std::to_string(c.id) + " has no data");
  }
  SgdConfig local = cfg.optimizer;
  local.epochs = cfg.local_epochs;

  std::vector<RoundLog> logs;
  ParamVector global = init_params(cfg.model, cfg.seed);
  for (std::size_t round = 1; round <= cfg.num_rounds; ++round) {
    RoundLog log;
    log.t = static_cast<int>(round);
    log.global_before = global;
    log.participants = Coalition::grand(n);
    log.local_updates.resize(clients.size());
    for (const auto& c : clients) log.sizes.push_back(c.size());

    auto train_one = [&](std::size_t k) {
      const auto seed = client_seed(cfg, log.t, clients[k].id);
      log.local_updates[k] = train_local(global, clients[k].dataset, local, seed) - global;
    };
    const unsigned workers = std::min<unsigned>(std::max(1u, cfg.threads), static_cast<unsigned>(n));
    if (workers <= 1) {
      for (std::size_t k = 0; k < clients.size(); ++k) train_one(k);
    } else {
      std::vector<std::thread> pool;
      std::exception_ptr failure;
      std::mutex failure_mutex;
      for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t k = w; k < clients.size(); k += workers) {
            try {
              train_one(k);
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
    global = aggregate(global, log.local_updates, log.sizes, log.participants);
    log.global_after = global;
    log.test_acc_after = evaluate(global, test);
    logs.push_back(std::move(log));
  }
  return logs;
}

// Final test accuracy of a fresh federation among the members of s only.
inline double retrain_coalition(Coalition s, const std::vector<ClientState>& clients, const FederationConfig& cfg,
                                const EvalSet& test) {
  if (s.is_empty()) throw EmptyCoalition("cannot train an empty coalition");
  if (s.players() != static_cast<int>(clients.size())) throw InvalidArgument("coalition size does not match clients");
  std::vector<ClientState> members;
  for (int i : s.members()) members.push_back(clients[static_cast<std::size_t>(i)]);
  return run_federation(members, cfg, test).back().test_acc_after;
}

// Directory layout: manifest.txt plus r<t>_before.bin, r<t>_after.bin and
// r<t>_c<i>.bin (client delta) per round, all in write_params format.
inline void dump_round_logs(const std::vector<RoundLog>& logs, const std::filesystem::path& dir) {
  if (logs.empty()) throw InvalidArgument("no round logs to dump");
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const ParamVector& p) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    write_params(out, p);
  };
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  const int n = logs.front().players();
  manifest << "fedce-roundlog 1\nclients " << n << "\nrounds " << logs.size() << "\nsizes";
  for (auto s : logs.front().sizes) manifest << ' ' << s;
  manifest << '\n' << std::setprecision(17);
  for (const auto& log : logs) {
    manifest << "round " << log.t << " participants " << std::hex << log.participants.mask() << std::dec
             << " test_acc " << log.test_acc_after << '\n';
    const std::string prefix = "r" + std::to_string(log.t);
    write(prefix + "_before.bin", log.global_before);
    write(prefix + "_after.bin", log.global_after);
    for (int i : log.participants.members()) {
      write(prefix + "_c" + std::to_string(i) + ".bin", log.local_updates[static_cast<std::size_t>(i)]);
    }
  }
}

inline std::vector<RoundLog> load_round_logs(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("missing manifest in " + dir.string());
  auto read = [&](const std::string& name) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw IoError("missing " + (dir / name).string());
    return read_params(in);
  };
  std::string tag, key;
  int version = 0, n = 0;
  std::size_t rounds = 0;
  if (!(manifest >> tag >> version) || tag != "fedce-roundlog" || version != 1) {
    throw BadMagic("not a round-log manifest: " + dir.string());
  }
  if (!(manifest >> key >> n) || key != "clients" || n < 1 || n > kMaxPlayers) {
    throw ConfigError("bad clients line in manifest");
  }
  if (!(manifest >> key >> rounds) || key != "rounds") throw ConfigError("bad rounds line in manifest");
  if (!(manifest >> key) || key != "sizes") throw ConfigError("bad sizes line in manifest");
  std::vector<std::size_t> sizes(static_cast<std::size_t>(n));
  for (auto& s : sizes) {
    if (!(manifest >> s)) throw ConfigError("bad sizes line in manifest");
  }
  std::vector<RoundLog> logs;
  for (std::size_t r = 0; r < rounds; ++r) {
    RoundLog log;
    std::string k1, k2, k3;
    Coalition::Mask mask = 0;
    if (!(manifest >> k1 >> log.t >> k2 >> std::hex >> mask >> std::dec >> k3 >> log.test_acc_after) ||
        k1 != "round" || k2 != "participants" || k3 != "test_acc") {
      throw ConfigError("bad round line in manifest");
    }
    log.participants = Coalition(mask, n);
    log.sizes = sizes;
    const std::string prefix = "r" + std::to_string(log.t);
    log.global_before = read(prefix + "_before.bin");
    log.global_after = read(prefix + "_after.bin");
    log.local_updates.resize(static_cast<std::size_t>(n));
    for (int i : log.participants.members()) {
      log.local_updates[static_cast<std::size_t>(i)] = read(prefix + "_c" + std::to_string(i) + ".bin");
    }
    logs.push_back(std::move(log));
  }
  if (logs.empty()) throw ConfigError("manifest lists no rounds");
  return logs;
}

}  // namespace fedce
