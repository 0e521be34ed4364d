#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "d2/decoding.hpp"
#include "d2/likelihood.hpp"
#include "d2/model.hpp"
#include "d2/trajectory.hpp"

// Brute-force reference computations over every trajectory of tiny
// instances. These deliberately avoid the likelihood estimators where the
// quantity under test would otherwise be checked against itself.
namespace d2::oracle {

struct EnumerationBudget {
  std::uint64_t max_trajectories = 1'000'000;
  int max_length = 4;
  int max_vocab = 4;
  int max_steps = 4;
};

// Either every unmask order a random-policy schedule can draw (each weighted
// by its probability), or one fixed schedule with probability 1.
struct ScheduleFamily {
  enum class Kind { random_order, fixed } kind = Kind::random_order;
  decoding::ScheduleSpec spec;
  DecodeSchedule schedule;

  static ScheduleFamily random_order(int length, int steps, int tokens_per_step) {
    ScheduleFamily f;
    f.spec = {length, steps, tokens_per_step, SelectionPolicy::random};
    return f;
  }
  static ScheduleFamily fixed(DecodeSchedule s) {
    ScheduleFamily f;
    f.kind = Kind::fixed;
    f.spec = {s.length, s.steps, s.tokens_per_step, SelectionPolicy::random};
    f.schedule = std::move(s);
    return f;
  }
  int length() const { return kind == Kind::fixed ? schedule.length : spec.length; }
  int steps() const { return kind == Kind::fixed ? schedule.steps : spec.steps; }
  std::vector<int> step_sizes() const;
};

struct EnumeratedTrajectory {
  Trajectory traj;     // logprobs hold the per-token model log-probs
  double order_prob = 1.0;
  double prob = 0.0;   // order_prob * prod of token probabilities
};

// Number of trajectories the family produces over `vocab` values.
std::uint64_t trajectory_count(const ScheduleFamily& family, int vocab);

// Throws BudgetError when the instance exceeds `budget`.
std::vector<EnumeratedTrajectory> enumerate_trajectories(const model::ModelParams& params,
                                                         std::span<const int> prompt,
                                                         const ScheduleFamily& family,
                                                         Generator generator,
                                                         const EnumerationBudget& budget = {});

using RewardFn = std::function<double(std::span<const int> prompt, std::span<const int> tokens)>;

// d/dtheta of sum_traj p_theta(traj) r(traj), differentiated directly through
// the enumerated probabilities. One vector entry per scalar parameter, in
// ModelParams tensor order.
std::vector<double> exact_policy_gradient(const model::ModelParams& params,
                                          std::span<const int> prompt,
                                          const ScheduleFamily& family, Generator generator,
                                          const RewardFn& reward,
                                          const EnumerationBudget& budget = {});

// Exact expectation under pi_old = params of the gradient of the per-step
// importance-weighted objective r * sum_l pi_theta / pi_old, taken at
// theta = theta_old through the training loss code path (full estimator,
// advantage = reward, no KL).
std::vector<double> estimator_expected_gradient(const model::ModelParams& params,
                                                std::span<const int> prompt,
                                                const ScheduleFamily& family,
                                                Generator generator, const RewardFn& reward,
                                                const EnumerationBudget& budget = {});

struct ExactStepMerge {
  double dn = 0.0;
  double eps_block = 0.0;
  double probability_mass = 0.0;
  std::uint64_t trajectories = 0;
};

// D_N = E_traj[log pi_full - log pi_stepmerge(N)] and eps_block over every
// reachable state, by enumeration.
ExactStepMerge exact_DN_and_eps(const model::ModelParams& params, std::span<const int> prompt,
                                const ScheduleFamily& family, Generator generator, int n,
                                const EnumerationBudget& budget = {});

struct EquivalenceReport {
  Generator generator = Generator::any_order;
  int trials = 0;
  int causal_trials = 0;      // trials whose masks pass the causality check
  double max_gap = 0.0;       // max over trials and tokens of |one-shot - per-step|
  bool equivalent = false;    // max_gap <= tolerance
  double tolerance = 1e-9;
};

// Samples `trials` trajectories from `generator` with random prompts and
// schedules and compares one-shot per-token log-probs with the per-step ones.
EquivalenceReport oneshot_equivalence_suite(const model::ModelParams& params,
                                            const decoding::ScheduleSpec& spec,
                                            Generator generator, int prompt_length, int trials,
                                            std::uint64_t seed, double tolerance = 1e-9);

}  // namespace d2::oracle
