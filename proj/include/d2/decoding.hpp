#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2/model.hpp"
#include "d2/rng.hpp"
#include "d2/trajectory.hpp"

namespace d2::decoding {

// Fixed-k schedule: |U_t| = k for t = T-1..1 and the remainder at t = 0.
// Requires k*(T-1) < L <= k*T. With policy random the sets are drawn
// uniformly now; with top_confidence they are left pending for the sampler.
DecodeSchedule make_schedule(int length, int steps, int tokens_per_step, SelectionPolicy policy,
                             Rng& rng);

// Parameters of a fixed-k schedule family; draw() calls make_schedule.
struct ScheduleSpec {
  int length = 8;
  int steps = 4;
  int tokens_per_step = 2;
  SelectionPolicy policy = SelectionPolicy::random;

  DecodeSchedule draw(Rng& rng) const {
    return make_schedule(length, steps, tokens_per_step, policy, rng);
  }
};

// Schedule with explicitly given sets, U_t = sets[t].
DecodeSchedule schedule_from_sets(int tokens_per_step, std::vector<std::vector<int>> sets);

// Runs the reverse process from an all-mask completion. Tokens at U_t are
// drawn from softmax(logits / temperature) (argmax when temperature <= 0);
// recorded log-probs are always the temperature-1 model probabilities.
Trajectory sample(const model::ModelParams& params, std::span<const int> prompt,
                  DecodeSchedule schedule, Generator generator, double temperature, Rng& rng);

inline Trajectory sample_any_order(const model::ModelParams& params, std::span<const int> prompt,
                                   DecodeSchedule schedule, double temperature, Rng& rng) {
  return sample(params, prompt, std::move(schedule), Generator::any_order, temperature, rng);
}

inline Trajectory sample_bidirectional(const model::ModelParams& params,
                                       std::span<const int> prompt, DecodeSchedule schedule,
                                       double temperature, Rng& rng) {
  return sample(params, prompt, std::move(schedule), Generator::bidirectional, temperature, rng);
}

// Attention mask used by the trajectory's generator at step t (index t).
model::AttentionMaskMatrix step_mask(const DecodeSchedule& schedule, Generator generator,
                                     int step, int prompt_len);
std::vector<model::AttentionMaskMatrix> step_masks(const DecodeSchedule& schedule,
                                                   Generator generator, int prompt_len);

struct CausalityWitness {
  int condition = 0;        // 1, 2 or 3
  int position = 0;         // l
  int step = 0;             // t at which the violation is observed
  int other_step = -1;      // second step for condition 1
  std::vector<int> offending;  // completion positions attended in violation
};

struct CausalityReport {
  bool consistent_attention = true;   // condition 1
  bool no_future_when_decoded = true;  // condition 2
  bool no_future_after_decoded = true;  // condition 3
  bool reasonable = true;  // Omega_l within A_t^l for every t <= t_l
  std::vector<CausalityWitness> witnesses;

  bool passed() const {
    return consistent_attention && no_future_when_decoded && no_future_after_decoded;
  }
};

// masks[t] is the attention pattern at step t over the prompt+completion
// layout. Attention sets A_t^l are restricted to completion keys.
CausalityReport check_any_order_causal(std::span<const model::AttentionMaskMatrix> masks,
                                       const DecodeSchedule& schedule, int prompt_len);

nlohmann::json to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace d2::decoding
