#pragma once

#include <cstdint>
#include <string>

#include "d2/decoding.hpp"
#include "d2/model.hpp"
#include "d2/rltrain.hpp"

namespace d2::cli {

// Everything a run needs. The completion length and vocabulary come from the
// task; the file only sets what the task does not determine.
//
// YAML schema (all keys optional except `task`):
//   task: sorted | copy | mini_countdown | marker
//   seed: <uint>
//   out: <directory>
//   generator: any_order | bidirectional
//   model:    {d_model, n_layers, n_heads, max_positions, d_ff, init_std}
//   schedule: {steps, tokens_per_step, policy: random | top_confidence}
//   trainer:  {group_size, batch_prompts, inner_updates, clip_eps, clip, kl_beta,
//              advantage_norm, estimator, optimizer, learning_rate, adam_beta1,
//              adam_beta2, adam_eps, max_grad_norm, temperature, flop_budget,
//              eval_interval_flops, max_steps, eval_prompts}
//   pretrain: {steps, batch_size, learning_rate, max_grad_norm}
struct RunConfig {
  std::string task = "sorted";
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  Generator generator = Generator::any_order;
  model::ModelConfig model;
  double init_std = 0.02;
  decoding::ScheduleSpec schedule;
  rltrain::TrainerConfig trainer;
  rltrain::PretrainConfig pretrain{0, 16, 3e-3, 0, 1.0, 0};

  // Fills task-derived fields and checks every section.
  void resolve();
};

RunConfig parse_run_config(const std::string& yaml_text);
RunConfig load_run_config(const std::string& path);
// Omits `out`: where a run is written is not part of what it computes, so
// stored configs (and checkpoints) do not depend on the output directory.
std::string to_yaml(const RunConfig& cfg);

// D2_OUT and D2_SEED, when set, replace `out` and `seed`.
void apply_env_overrides(RunConfig& cfg);

}  // namespace d2::cli
