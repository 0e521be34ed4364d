#include <cmath>

#include "d2/rltrain.hpp"

namespace d2::rltrain {

namespace dm = d2::diffmath;

void TrainerConfig::validate() const {
  if (group_size < 2) throw ConfigError("trainer.group_size must be >= 2");
  if (batch_prompts < 1) throw ConfigError("trainer.batch_prompts must be >= 1");
  if (inner_updates < 1) throw ConfigError("trainer.inner_updates must be >= 1");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("trainer.clip_eps must be in (0, 1)");
  if (!(kl_beta >= 0.0)) throw ConfigError("trainer.kl_beta must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("trainer.learning_rate must be > 0");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("trainer.max_grad_norm must be >= 0");
  if (eval_prompts < 1) throw ConfigError("trainer.eval_prompts must be >= 1");
  if (flop_budget == 0 && max_steps <= 0)
    throw ConfigError("trainer needs a flop_budget or max_steps");
  if (estimator.kind == likelihood::EstimatorKind::stepmerge && estimator.segments < 1)
    throw ConfigError("trainer.estimator: stepmerge needs N >= 1");
}

dm::Var trajectory_loss(dm::Tape& tape, dm::Var logprobs, double advantage,
                        std::span<const double> old_logprobs, std::span<const double> ref_logprobs,
                        const TrainerConfig& cfg, TokenStats* stats) {
  const std::size_t L = tape.values(logprobs).size();
  if (old_logprobs.size() != L)
    throw ConfigError("grpo loss: stale log-prob cache missing or of wrong length");
  if (cfg.kl_beta > 0.0 && ref_logprobs.size() != L)
    throw ConfigError("grpo loss: reference log-prob cache missing or of wrong length");
  const double inv_l = 1.0 / static_cast<double>(L);

  const dm::Var old_v = tape.constant(dm::Array({L}, std::vector<double>(old_logprobs.begin(), old_logprobs.end())));
  const dm::Var rho = dm::exp(tape, dm::sub(tape, logprobs, old_v));
  const dm::Var unclipped = dm::scale(tape, rho, advantage);
  dm::Var objective = unclipped;
  if (cfg.clip) {
    const dm::Var clipped =
        dm::scale(tape, dm::clamp(tape, rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), advantage);
    objective = dm::minimum(tape, unclipped, clipped);
    if (stats) {
      const auto u = tape.values(unclipped);
      const auto c = tape.values(clipped);
      for (std::size_t i = 0; i < L; ++i) stats->clipped += c[i] < u[i];
    }
  }
  if (stats) stats->tokens += static_cast<int>(L);
  dm::Var loss = dm::scale(tape, dm::sum(tape, objective), -inv_l);

  if (!ref_logprobs.empty() && ref_logprobs.size() == L) {
    const dm::Var ref_v =
        tape.constant(dm::Array({L}, std::vector<double>(ref_logprobs.begin(), ref_logprobs.end())));
    const dm::Var delta = dm::sub(tape, ref_v, logprobs);
    const dm::Var k3 = dm::add_scalar(tape, dm::sub(tape, dm::exp(tape, delta), delta), -1.0);
    const dm::Var kl = dm::scale(tape, dm::sum(tape, k3), inv_l);
    if (stats) stats->kl_sum += tape.scalar(kl);
    if (cfg.kl_beta > 0.0) loss = dm::add(tape, loss, dm::scale(tape, kl, cfg.kl_beta));
  }
  return loss;
}

namespace {

struct Item {
  const GroupBatch* batch;
  int index;
};

std::vector<Item> flatten(std::span<const GroupBatch> batches) {
  std::vector<Item> items;
  for (const auto& b : batches) {
    if (static_cast<int>(b.old_logprobs.size()) != b.size())
      throw ConfigError("grpo loss: batch has no stale log-prob cache");
    if (static_cast<int>(b.advantages.values.size()) != b.size())
      throw ConfigError("grpo loss: batch has no advantages");
    for (int i = 0; i < b.size(); ++i) items.push_back({&b, i});
  }
  if (items.empty()) throw ConfigError("grpo loss: no trajectories");
  return items;
}

std::span<const double> ref_for(const Item& it) {
  if (it.batch->ref_logprobs.empty()) return {};
  return it.batch->ref_logprobs[static_cast<std::size_t>(it.index)];
}

}  // namespace

LossTerms grpo_loss(const model::ModelParams& theta, std::span<const GroupBatch> batches,
                    const TrainerConfig& cfg, std::vector<std::vector<double>>* grads) {
  const auto items = flatten(batches);
  const std::size_t n = items.size();
  std::vector<double> losses(n);
  std::vector<TokenStats> stats(n);
  std::vector<std::uint64_t> flops(n);
  std::vector<std::vector<std::vector<double>>> item_grads(grads ? n : 0);
  std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    try {
      const Item& it = items[i];
      const auto gi = static_cast<std::size_t>(it.index);
      dm::Tape tape(grads ? dm::Tape::Mode::record : dm::Tape::Mode::no_grad);
      const auto bound = model::bind(tape, theta);
      const auto scored =
          likelihood::score_tokens(tape, bound, it.batch->trajectories[gi], cfg.estimator);
      const dm::Var loss =
          trajectory_loss(tape, scored.logprobs, it.batch->advantages.values[gi],
                          it.batch->old_logprobs[gi], ref_for(it), cfg, &stats[i]);
      losses[i] = tape.scalar(loss);
      flops[i] = tape.matmul_flops();
      if (grads) {
        tape.backward(loss);
        flops[i] *= 3;
        auto& g = item_grads[i];
        for (const auto& v : bound.vars) g.push_back(tape.grad_copy(v));
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw NumericError("grpo loss, trajectory " + std::to_string(i) + ": " + errors[i]);
  }

  LossTerms out;
  int tokens = 0, clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.loss += losses[i];
    out.kl += stats[i].kl_sum;
    out.flops += flops[i];
    tokens += stats[i].tokens;
    clipped += stats[i].clipped;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss *= inv_n;
  out.kl *= inv_n;
  out.clip_fraction = tokens > 0 ? static_cast<double>(clipped) / tokens : 0.0;
  if (grads) {
    grads->assign(theta.tensors.size(), {});
    for (std::size_t p = 0; p < theta.tensors.size(); ++p) (*grads)[p].assign(theta.tensors[p].size(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < theta.tensors.size(); ++p) {
        auto& dst = (*grads)[p];
        const auto& src = item_grads[i][p];
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    for (auto& g : *grads)
      for (double& x : g) x *= inv_n;
  }
  return out;
}

double kl_penalty(const model::ModelParams& theta, std::span<const GroupBatch> batches,
                  const TrainerConfig& cfg) {
  for (const auto& b : batches) {
    if (static_cast<int>(b.ref_logprobs.size()) != b.size())
      throw ConfigError("kl penalty: batch has no reference log-prob cache");
  }
  return grpo_loss(theta, batches, cfg, nullptr).kl;
}

}  // namespace d2::rltrain
