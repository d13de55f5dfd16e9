#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedce/coalition.hpp"
#include "fedce/errors.hpp"

namespace fedce {

// Memoizing wrapper around a characteristic function. Safe to call from
// several threads: the first value stored for a coalition is the one every
// caller sees afterwards.
class UtilityOracle {
 public:
  using Evaluator = std::function<double(Coalition)>;

  explicit UtilityOracle(Evaluator evaluator) : evaluator_(std::move(evaluator)) {}

  UtilityOracle(const UtilityOracle&) = delete;
  UtilityOracle& operator=(const UtilityOracle&) = delete;

  double operator()(Coalition s) const {
    {
      std::shared_lock lock(mutex_);
      if (auto it = cache_.find(s.mask()); it != cache_.end()) return it->second;
    }
    const double value = evaluator_(s);
    evaluations_.fetch_add(1, std::memory_order_relaxed);
    std::unique_lock lock(mutex_);
    return cache_.try_emplace(s.mask(), value).first->second;
  }

  // Number of times the underlying evaluator actually ran.
  std::size_t evaluations() const { return evaluations_.load(std::memory_order_relaxed); }

  std::size_t cached() const {
    std::shared_lock lock(mutex_);
    return cache_.size();
  }

 private:
  Evaluator evaluator_;
  mutable std::shared_mutex mutex_;
  mutable std::unordered_map<Coalition::Mask, double> cache_;
  mutable std::atomic<std::size_t> evaluations_{0};
};

// A transferable-utility game in characteristic-function form.
class Game {
 public:
  Game(int n, UtilityOracle::Evaluator evaluator)
      : n_(n), oracle_(std::make_shared<UtilityOracle>(std::move(evaluator))) {
    if (n < 1 || n > kMaxPlayers) {
      throw InvalidArgument("game player count must be in [1, 24], got " + std::to_string(n));
    }
  }

  // Explicit game from a table indexed by coalition mask (size 2^n).
  static Game from_table(int n, std::vector<double> table) {
    if (table.size() != subset_count(n)) {
      throw InvalidArgument("utility table must have 2^n entries");
    }
    auto values = std::make_shared<const std::vector<double>>(std::move(table));
    return Game(n, [values](Coalition s) { return (*values)[s.mask()]; });
  }

  int players() const { return n_; }

  double operator()(Coalition s) const { return (*oracle_)(s); }
  double operator()(Coalition::Mask m) const { return (*oracle_)(Coalition(m, n_)); }

  double grand_value() const { return (*this)(Coalition::grand(n_)); }

  // Every v(S) in mask order.
  std::vector<double> table() const {
    std::vector<double> out(subset_count(n_));
    for (Coalition::Mask m = 0; m < out.size(); ++m) out[m] = (*this)(m);
    return out;
  }

  const UtilityOracle& oracle() const { return *oracle_; }

  // v'(S) = v(S) - v(empty), so that v'(empty) = 0.
  Game normalized() const {
    const double base = (*this)(Coalition::empty(n_));
    auto inner = oracle_;
    return Game(n_, [inner, base](Coalition s) { return (*inner)(s) - base; });
  }

 private:
  int n_;
  std::shared_ptr<UtilityOracle> oracle_;
};

// Game files: first meaningful line holds n, then "<hex mask> <value>" per
// line. '#' starts a comment. Subsets that are not listed are worth 0.
inline Game parse_game(std::istream& in) {
  int n = 0;
  std::vector<double> table;
  std::vector<bool> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string first;
    if (!(fields >> first)) continue;
    const std::string where = "game file line " + std::to_string(line_no);
    if (n == 0) {
      if (first == "n" && !(fields >> first)) throw ConfigError(where + ": missing player count");
      auto [ptr, ec] = std::from_chars(first.data(), first.data() + first.size(), n);
      if (ec != std::errc{} || ptr != first.data() + first.size() || n < 1 || n > kMaxPlayers) {
        throw ConfigError(where + ": invalid player count '" + first + "'");
      }
      table.assign(subset_count(n), 0.0);
      seen.assign(subset_count(n), false);
      continue;
    }
    std::string hex = first;
    if (hex.size() > 2 && hex[0] == '0' && (hex[1] == 'x' || hex[1] == 'X')) hex = hex.substr(2);
    Coalition::Mask mask = 0;
    auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), mask, 16);
    if (ec != std::errc{} || ptr != hex.data() + hex.size()) {
      throw ConfigError(where + ": invalid coalition mask '" + first + "'");
    }
    if (mask > Coalition::full_mask(n)) throw ConfigError(where + ": mask out of range");
    std::string value_text;
    if (!(fields >> value_text)) throw ConfigError(where + ": missing utility");
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(value_text, &used);
      if (used != value_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError(where + ": invalid utility '" + value_text + "'");
    }
    if (!std::isfinite(value)) throw ConfigError(where + ": utility must be finite");
    if (seen[mask]) throw ConfigError(where + ": duplicate coalition");
    seen[mask] = true;
    table[mask] = value;
  }
  if (n == 0) throw ConfigError("game file: missing player count");
  return Game::from_table(n, std::move(table));
}

inline Game load_game_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open game file: " + path);
  return parse_game(in);
}

inline void write_game(std::ostream& out, const Game& game) {
  const int n = game.players();
  out << n << '\n';
  out << std::setprecision(17);
  for (Coalition::Mask m = 0; m < subset_count(n); ++m) {
    const double v = game(m);
    if (v != 0.0) out << std::hex << m << std::dec << ' ' << v << '\n';
  }
}

}  // namespace fedce
