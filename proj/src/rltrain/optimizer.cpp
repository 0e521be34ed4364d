#include <cmath>

#include "d2/rltrain.hpp"

namespace d2::rltrain {

std::string to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("trainer.optimizer must be adam or sgd, got '" + s + "'");
}

Optimizer::Optimizer(const TrainerConfig& cfg, const model::ModelParams& shape_like)
    : kind_(cfg.optimizer),
      lr_(cfg.learning_rate),
      b1_(cfg.adam_beta1),
      b2_(cfg.adam_beta2),
      eps_(cfg.adam_eps),
      max_norm_(cfg.max_grad_norm) {
  if (kind_ == OptimizerKind::adam) {
    for (const auto& t : shape_like.tensors) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }
}

void Optimizer::step(model::ModelParams& params, const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params.tensors.size())
    throw ConfigError("optimizer: gradient count does not match parameter count");
  if (kind_ == OptimizerKind::adam && m_.size() != params.tensors.size())
    throw ConfigError("optimizer was built for a different parameter layout");
  double scale = 1.0;
  if (max_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (double x : g) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("optimizer: non-finite gradient norm");
    if (norm > max_norm_) scale = max_norm_ / norm;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t p = 0; p < grads.size(); ++p) {
    auto& w = params.tensors[p].values;
    const auto& g = grads[p];
    if (g.size() != w.size()) throw ConfigError("optimizer: gradient shape mismatch for " + params.names[p]);
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * scale * g[i];
      continue;
    }
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = scale * g[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
      v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

}  // namespace d2::rltrain
