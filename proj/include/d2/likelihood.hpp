#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "d2/decoding.hpp"
#include "d2/diffmath.hpp"
#include "d2/model.hpp"
#include "d2/rng.hpp"
#include "d2/trajectory.hpp"

namespace d2::likelihood {

enum class EstimatorKind { full, stepmerge, oneshot };

struct Estimator {
  EstimatorKind kind = EstimatorKind::full;
  int segments = 1;     // N, stepmerge only
  bool uneven = false;  // allow N not dividing T

  static Estimator full() { return {}; }
  static Estimator stepmerge(int n, bool uneven = false) {
    return {EstimatorKind::stepmerge, n, uneven};
  }
  static Estimator oneshot() { return {EstimatorKind::oneshot, 1, false}; }

  // "full", "stepmerge:N", "anyorder" (alias "oneshot").
  static Estimator parse(const std::string& s);
  std::string name() const;
};

// Steps [lo, hi) scored together from the context x_hi, i.e. the context in
// place just before step hi-1 runs.
struct Segment {
  int lo = 0;
  int hi = 0;
};

// Segments ordered by decoding time (highest steps first). With an uneven
// split the earliest-decoded segments take ceil(T/N) steps.
std::vector<Segment> make_segments(int steps, int n, bool uneven);

enum class Attribution { step, segment, oneshot };

struct TokenScore {
  int position = 0;
  int token = 0;
  double logprob = 0.0;
  Attribution tag = Attribution::step;
  int index = 0;  // step t, segment n, or 0
};

struct LikelihoodBreakdown {
  std::vector<TokenScore> entries;  // ordered by position
  double total = 0.0;
  int forward_passes = 0;

  double mean_per_token() const {
    return entries.empty() ? 0.0 : total / static_cast<double>(entries.size());
  }
  std::vector<double> logprobs() const;
};

// Differentiable per-position log-probs on an existing tape.
struct ScoredTokens {
  diffmath::Var logprobs;  // rank-1, index = completion position l
  std::vector<Attribution> tags;
  std::vector<int> indices;
  int forward_passes = 0;
};

ScoredTokens score_tokens(diffmath::Tape& tape, const model::BoundModel& model,
                          const Trajectory& traj, const Estimator& est);

LikelihoodBreakdown traj_loglik(const model::ModelParams& params, const Trajectory& traj,
                                const Estimator& est);

inline LikelihoodBreakdown traj_loglik_full(const model::ModelParams& params,
                                            const Trajectory& traj) {
  return traj_loglik(params, traj, Estimator::full());
}
inline LikelihoodBreakdown traj_loglik_stepmerge(const model::ModelParams& params,
                                                 const Trajectory& traj, int n,
                                                 bool uneven = false) {
  return traj_loglik(params, traj, Estimator::stepmerge(n, uneven));
}
inline LikelihoodBreakdown traj_loglik_oneshot(const model::ModelParams& params,
                                               const Trajectory& traj) {
  return traj_loglik(params, traj, Estimator::oneshot());
}

// Per-step evaluation with caller-supplied attention masks (masks[t]).
LikelihoodBreakdown traj_loglik_with_masks(const model::ModelParams& params,
                                           const Trajectory& traj,
                                           std::span<const model::AttentionMaskMatrix> masks);

// ---- StepMerge error analysis ---------------------------------------------

using PromptSampler = std::function<std::vector<int>(Rng&)>;

struct DNEstimate {
  int n = 0;
  double mean = 0.0;
  double std_error = 0.0;
  int samples = 0;
  std::vector<double> per_sample;
};

// Draws trajectories (temperature 1) and returns, for every N in `ns`, the
// mean of log pi_full - log pi_stepmerge(N) over the same trajectories.
std::vector<DNEstimate> estimate_DN_sweep(const model::ModelParams& params,
                                          const PromptSampler& prompts,
                                          const decoding::ScheduleSpec& spec, Generator generator,
                                          std::span<const int> ns, int n_samples, Rng& rng);

DNEstimate estimate_DN(const model::ModelParams& params, const PromptSampler& prompts,
                       const decoding::ScheduleSpec& spec, Generator generator, int n,
                       int n_samples, Rng& rng);

// Max over trajectories, blocks, steps t inside a block, still-masked
// positions and values v of log nu(v | x_{t+1}) - log nu(v | block boundary).
double block_sensitivity(const model::ModelParams& params, std::span<const Trajectory> trajs,
                         int n);

enum class EstimationMode { monte_carlo, exact };
std::string to_string(EstimationMode m);

struct BoundReport {
  int n = 0;
  int steps = 0;
  int length = 0;
  double dn = 0.0;
  double dn_stderr = 0.0;
  EstimationMode mode = EstimationMode::monte_carlo;
  int samples = 0;
  double eps_block = 0.0;
  EstimationMode eps_mode = EstimationMode::monte_carlo;
  double bound = 0.0;
  bool holds = false;
};

// L * log(T/N + 1) + L * eps_block.
double stepmerge_kl_bound(int length, int steps, int n, double eps_block);

BoundReport make_bound_report(int length, int steps, int n, double dn, double dn_stderr,
                              EstimationMode mode, int samples, double eps_block,
                              EstimationMode eps_mode);

void write_dn_sweep_csv(std::ostream& os, std::span<const BoundReport> rows);

}  // namespace d2::likelihood
