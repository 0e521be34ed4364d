#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2/decoding.hpp"
#include "d2/error.hpp"
#include "d2/likelihood.hpp"
#include "d2/model.hpp"
#include "d2/tasks.hpp"

namespace d2::rltrain {

// ---- advantages -------------------------------------------------------------

enum class AdvantageNorm { mean_only, mean_std };
std::string to_string(AdvantageNorm a);
AdvantageNorm parse_advantage_norm(const std::string& s);

struct Advantages {
  std::vector<double> values;
  bool degenerate = false;  // mean_std with std < 1e-8: all zero
};

// mean_only: r_i - mean(r). mean_std: additionally divided by the population
// standard deviation.
Advantages compute_advantages(std::span<const double> rewards, AdvantageNorm mode);

// ---- configuration ----------------------------------------------------------

enum class OptimizerKind { sgd, adam };
std::string to_string(OptimizerKind o);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainerConfig {
  int group_size = 8;      // G
  int batch_prompts = 4;   // prompts per outer step
  int inner_updates = 2;   // n
  double clip_eps = 0.2;
  bool clip = true;  // false gives the unclipped importance-weighted loss
  double kl_beta = 0.01;
  AdvantageNorm advantage_norm = AdvantageNorm::mean_only;
  likelihood::Estimator estimator = likelihood::Estimator::stepmerge(2);
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_grad_norm = 1.0;  // 0 disables clipping of the global norm
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t flop_budget = 0;         // 0: stop on max_steps only
  std::uint64_t eval_interval_flops = 0;  // 0: evaluate every outer step
  int max_steps = 0;                       // 0: stop on flop_budget only
  int eval_prompts = 64;

  void validate() const;
};

// ---- group batches and losses ----------------------------------------------

struct GroupBatch {
  std::vector<int> prompt;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  Advantages advantages;
  // Per trajectory, per completion position, under the trainer's estimator.
  // Computed once from the stale and reference snapshots and reused.
  std::vector<std::vector<double>> old_logprobs;
  std::vector<std::vector<double>> ref_logprobs;  // empty when kl_beta == 0

  int size() const { return static_cast<int>(trajectories.size()); }
};

nlohmann::json to_json(const GroupBatch& b);

struct TokenStats {
  int tokens = 0;
  int clipped = 0;
  double kl_sum = 0.0;  // sum over trajectories of (1/L) sum_l kl_l
};

// Loss of one trajectory on `tape`:
//   -(1/L) sum_l min(rho_l A, clip(rho_l, 1-eps, 1+eps) A)
//   + beta (1/L) sum_l (exp(d_l) - d_l - 1),   d_l = log pi_ref - log pi_theta
// with rho_l = exp(log pi_theta - log pi_old).
diffmath::Var trajectory_loss(diffmath::Tape& tape, diffmath::Var logprobs, double advantage,
                              std::span<const double> old_logprobs,
                              std::span<const double> ref_logprobs, const TrainerConfig& cfg,
                              TokenStats* stats = nullptr);

struct LossTerms {
  double loss = 0.0;  // mean over trajectories
  double kl = 0.0;    // mean over trajectories of the (1/L) KL estimate
  double clip_fraction = 0.0;
  std::uint64_t flops = 0;  // forward + backward matmul FLOPs spent
};

// Mean trajectory loss over the batches. When `grads` is non-null it
// receives d loss / d theta per parameter tensor. Per-trajectory tapes run
// in parallel; their gradients are summed in trajectory order.
LossTerms grpo_loss(const model::ModelParams& theta, std::span<const GroupBatch> batches,
                    const TrainerConfig& cfg, std::vector<std::vector<double>>* grads = nullptr);

// Mean over trajectories of (1/L) sum_l (exp(d_l) - d_l - 1).
double kl_penalty(const model::ModelParams& theta, std::span<const GroupBatch> batches,
                  const TrainerConfig& cfg);

// Samples G trajectories for `prompt` from `old_policy` and fills rewards,
// advantages and the cached log-probs. Trajectory g uses the rng stream
// (seed, step, prompt_index, g).
GroupBatch sample_group(const model::ModelParams& old_policy, const model::ModelParams* ref,
                        const tasks::Task& task, std::vector<int> prompt,
                        const decoding::ScheduleSpec& spec, Generator generator,
                        const TrainerConfig& cfg, std::uint64_t step, std::uint64_t prompt_index,
                        std::uint64_t* flops = nullptr);

// ---- optimizer --------------------------------------------------------------

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const TrainerConfig& cfg, const model::ModelParams& shape_like);

  // Applies one update; `grads` are d loss / d theta.
  void step(model::ModelParams& params, const std::vector<std::vector<double>>& grads);
  int steps_taken() const { return t_; }

 private:
  OptimizerKind kind_ = OptimizerKind::adam;
  double lr_ = 0.0, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8, max_norm_ = 0.0;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- FLOP accounting --------------------------------------------------------

// Sequence lengths of forward passes, with or without a backward pass.
struct OpTrace {
  std::vector<std::size_t> forward_only;
  std::vector<std::size_t> with_backward;
};

// 2*m*k*n per matmul; a backward pass costs twice its forward.
std::uint64_t estimate_flops(const model::ModelConfig& config, const OpTrace& trace);

// ---- training loop ----------------------------------------------------------

struct MetricsRecord {
  int step = 0;
  std::uint64_t flops = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
};

std::string to_jsonl(const MetricsRecord& r);

struct TrainState {
  model::ModelParams theta;
  model::ModelParams theta_old;
  model::ModelParams ref;
  int step = 0;
  std::uint64_t flops = 0;
  Optimizer optimizer;
};

// Thrown when a loss or gradient turns non-finite; carries the batch.
class NonFiniteLoss : public NumericError {
 public:
  NonFiniteLoss(const std::string& what, nlohmann::json dump)
      : NumericError(what), dump_(std::move(dump)) {}
  const nlohmann::json& dump() const { return dump_; }

 private:
  nlohmann::json dump_;
};

// Mean reward over `n_prompts` fixed evaluation prompts, one sample each.
double evaluate(const model::ModelParams& params, const tasks::Task& task,
                const decoding::ScheduleSpec& spec, Generator generator, int n_prompts,
                double temperature, std::uint64_t seed);

struct TrainCallbacks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(const TrainState&)> on_eval;  // after each evaluation
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  model::ModelParams params;
  int steps = 0;
  std::uint64_t flops = 0;
};

// GRPO outer loop: snapshot theta_old, sample groups, cache stale/reference
// log-probs, take n inner updates on the same trajectories. `init` is both
// the starting point and the frozen reference policy.
TrainResult train(const model::ModelParams& init, const tasks::Task& task,
                  const decoding::ScheduleSpec& spec, Generator generator,
                  const TrainerConfig& cfg, const TrainCallbacks& callbacks = {});

// ---- supervised masked-diffusion pretraining --------------------------------

struct PretrainConfig {
  int steps = 200;
  int batch_size = 16;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  double max_grad_norm = 1.0;
  int step_offset = 0;  // lets a run continue with fresh rng streams
};

// Trains on task demonstrations. bidirectional: random masking rate, cross
// entropy on masked slots under full attention. any_order: random schedules
// from `spec`, cross entropy of every token in the one-shot layout.
// Returns the mean loss of the last step.
double pretrain(model::ModelParams& params, const tasks::Task& task,
                const decoding::ScheduleSpec& spec, Generator generator,
                const PretrainConfig& cfg, Optimizer* optimizer = nullptr);

}  // namespace d2::rltrain
