#pragma once

// Pseudo-model utilities rebuilt directly from round logs, independent of the
// bank in ce.hpp.

#include <cstdint>
#include <vector>

#include "fedce/flsim.hpp"

namespace oracle {

// Coalition model rebuilt from scratch: init plus, for every round up to
// `rounds`, the size-weighted mean of the members' deltas.
inline std::vector<double> direct_model(const std::vector<fedce::RoundLog>& logs, std::uint32_t mask, std::size_t rounds) {
  const auto& init = logs.front().global_before;
  std::vector<double> w(init.values().begin(), init.values().end());
  for (std::size_t r = 0; r < rounds; ++r) {
    double total = 0.0;
    for (int i = 0; i < logs[r].players(); ++i) {
      if (mask >> i & 1) total += static_cast<double>(logs[r].sizes[static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < logs[r].players(); ++i) {
      if (!(mask >> i & 1)) continue;
      const auto& d = logs[r].local_updates[static_cast<std::size_t>(i)];
      const double share = static_cast<double>(logs[r].sizes[static_cast<std::size_t>(i)]) / total;
      for (std::size_t k = 0; k < w.size(); ++k) w[k] += share * d[k];
    }
  }
  return w;
}

inline std::vector<double> direct_utilities(const std::vector<fedce::RoundLog>& logs, const fedce::EvalSet& test,
                                     std::size_t rounds) {
  const int n = logs.front().players();
  const auto& spec = logs.front().global_before.spec();
  const double v0 = fedce::evaluate(logs.front().global_before, test);
  std::vector<double> v(std::size_t{1} << n, 0.0);
  for (std::uint32_t m = 1; m < v.size(); ++m) {
    v[m] = fedce::evaluate(fedce::ParamVector(spec, direct_model(logs, m, rounds)), test) - v0;
  }
  return v;
}

}  // namespace oracle
