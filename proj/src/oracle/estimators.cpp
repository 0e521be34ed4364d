#include <algorithm>
#include <cmath>

#include "d2/error.hpp"
#include "d2/oracle.hpp"
#include "d2/rltrain.hpp"

namespace d2::oracle {

namespace dm = d2::diffmath;

std::vector<double> estimator_expected_gradient(const model::ModelParams& params,
                                                std::span<const int> prompt,
                                                const ScheduleFamily& family,
                                                Generator generator, const RewardFn& reward,
                                                const EnumerationBudget& budget) {
  const auto trajs = enumerate_trajectories(params, prompt, family, generator, budget);
  rltrain::TrainerConfig cfg;
  cfg.kl_beta = 0.0;
  cfg.estimator = likelihood::Estimator::full();

  std::vector<double> total(params.parameter_count(), 0.0);
  for (const auto& e : trajs) {
    if (e.prob == 0.0) continue;
    const double r = reward(e.traj.prompt, e.traj.tokens);
    if (r == 0.0) continue;
    dm::Tape tape;
    const auto bound = model::bind(tape, params);
    const auto scored = likelihood::score_tokens(tape, bound, e.traj, cfg.estimator);
    // The cached stale log-probs are the no-grad values of the same pass.
    const auto old = tape.values(scored.logprobs);
    const std::vector<double> old_copy(old.begin(), old.end());
    const dm::Var loss = rltrain::trajectory_loss(tape, scored.logprobs, r, old_copy, {}, cfg);
    tape.backward(loss);
    // loss = -(1/L) r sum_l rho_l, so the integrand gradient is -L * dloss.
    const double w = -static_cast<double>(e.traj.length()) * e.prob;
    std::size_t o = 0;
    for (const auto& v : bound.vars) {
      const auto g = tape.grad_copy(v);
      for (double x : g) total[o++] += w * x;
    }
  }
  return total;
}

ExactStepMerge exact_DN_and_eps(const model::ModelParams& params, std::span<const int> prompt,
                                const ScheduleFamily& family, Generator generator, int n,
                                const EnumerationBudget& budget) {
  const auto trajs = enumerate_trajectories(params, prompt, family, generator, budget);
  ExactStepMerge out;
  out.trajectories = trajs.size();
  std::vector<Trajectory> reachable;
  for (const auto& e : trajs) {
    out.probability_mass += e.prob;
    if (e.prob <= 0.0) continue;
    double full = 0.0;
    for (double x : e.traj.logprobs) full += x;
    const double merged = likelihood::traj_loglik_stepmerge(params, e.traj, n).total;
    out.dn += e.prob * (full - merged);
    reachable.push_back(e.traj);
  }
  out.eps_block = likelihood::block_sensitivity(params, reachable, n);
  return out;
}

EquivalenceReport oneshot_equivalence_suite(const model::ModelParams& params,
                                            const decoding::ScheduleSpec& spec,
                                            Generator generator, int prompt_length, int trials,
                                            std::uint64_t seed, double tolerance) {
  EquivalenceReport rep;
  rep.generator = generator;
  rep.trials = trials;
  rep.tolerance = tolerance;
  const int V = params.config.vocab_size;
  for (int i = 0; i < trials; ++i) {
    Rng r = Rng::stream({seed, static_cast<std::uint64_t>(i)});
    std::vector<int> prompt(static_cast<std::size_t>(prompt_length));
    for (int& p : prompt) p = static_cast<int>(r.below(static_cast<std::uint64_t>(V)));
    const auto traj = decoding::sample(params, prompt, spec.draw(r), generator, 1.0, r);
    const auto masks = decoding::step_masks(traj.schedule, generator, prompt_length);
    if (decoding::check_any_order_causal(masks, traj.schedule, prompt_length).passed())
      ++rep.causal_trials;
    const auto full = likelihood::traj_loglik_full(params, traj).logprobs();
    const auto one = likelihood::traj_loglik_oneshot(params, traj).logprobs();
    for (std::size_t l = 0; l < full.size(); ++l)
      rep.max_gap = std::max(rep.max_gap, std::abs(full[l] - one[l]));
  }
  rep.equivalent = rep.max_gap <= tolerance;
  return rep;
}

}  // namespace d2::oracle
