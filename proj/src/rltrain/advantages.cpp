#include <cmath>

#include "d2/rltrain.hpp"

namespace d2::rltrain {

std::string to_string(AdvantageNorm a) {
  return a == AdvantageNorm::mean_only ? "mean_only" : "mean_std";
}

AdvantageNorm parse_advantage_norm(const std::string& s) {
  if (s == "mean_only") return AdvantageNorm::mean_only;
  if (s == "mean_std") return AdvantageNorm::mean_std;
  throw ConfigError("trainer.advantage_norm must be mean_only or mean_std, got '" + s + "'");
}

Advantages compute_advantages(std::span<const double> rewards, AdvantageNorm mode) {
  if (rewards.size() < 2) throw ConfigError("advantages need a group of at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  Advantages a;
  a.values.reserve(rewards.size());
  for (double r : rewards) a.values.push_back(r - mean);
  if (mode == AdvantageNorm::mean_std) {
    double var = 0.0;
    for (double d : a.values) var += d * d;
    const double sd = std::sqrt(var / n);
    if (sd < 1e-8) {
      a.values.assign(rewards.size(), 0.0);
      a.degenerate = true;
    } else {
      for (double& d : a.values) d /= sd;
    }
  }
  return a;
}

}  // namespace d2::rltrain
