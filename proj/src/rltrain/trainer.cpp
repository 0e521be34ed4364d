#include <cmath>

#include "d2/parallel.hpp"
#include "d2/rltrain.hpp"

namespace d2::rltrain {

namespace {

// Stream tags keep prompt, group and evaluation draws apart.
constexpr std::uint64_t kPromptStream = 0x70726f6d;
constexpr std::uint64_t kEvalStream = 0x6576616c;

std::size_t scored_length(const Trajectory& t, const likelihood::Estimator& est) {
  const std::size_t base = t.prompt.size() + t.tokens.size();
  return est.kind == likelihood::EstimatorKind::oneshot ? base + t.tokens.size() : base;
}

std::vector<std::size_t> scoring_passes(const Trajectory& t, const likelihood::Estimator& est) {
  int passes = t.steps();
  if (est.kind == likelihood::EstimatorKind::stepmerge) passes = est.segments;
  if (est.kind == likelihood::EstimatorKind::oneshot) passes = 1;
  return std::vector<std::size_t>(static_cast<std::size_t>(passes), scored_length(t, est));
}

}  // namespace

nlohmann::json to_json(const GroupBatch& b) {
  nlohmann::json j;
  j["prompt"] = b.prompt;
  j["rewards"] = b.rewards;
  j["advantages"] = b.advantages.values;
  j["advantages_degenerate"] = b.advantages.degenerate;
  j["old_logprobs"] = b.old_logprobs;
  j["ref_logprobs"] = b.ref_logprobs;
  j["trajectories"] = nlohmann::json::array();
  for (const auto& t : b.trajectories) j["trajectories"].push_back(decoding::to_json(t));
  return j;
}

std::string to_jsonl(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["flops"] = r.flops;
  j["mean_reward"] = r.mean_reward;
  j["loss"] = r.loss;
  j["kl"] = r.kl;
  j["clip_fraction"] = r.clip_fraction;
  return j.dump();
}

GroupBatch sample_group(const model::ModelParams& old_policy, const model::ModelParams* ref,
                        const tasks::Task& task, std::vector<int> prompt,
                        const decoding::ScheduleSpec& spec, Generator generator,
                        const TrainerConfig& cfg, std::uint64_t step, std::uint64_t prompt_index,
                        std::uint64_t* flops) {
  const auto G = static_cast<std::size_t>(cfg.group_size);
  GroupBatch b;
  b.prompt = std::move(prompt);
  b.trajectories.resize(G);
  b.rewards.resize(G);
  b.old_logprobs.resize(G);
  const bool with_ref = ref != nullptr && cfg.kl_beta > 0.0;
  if (with_ref) b.ref_logprobs.resize(G);

  parallel_for(G, [&](std::size_t g) {
    Rng r = Rng::stream({cfg.seed, step, prompt_index, g});
    auto& traj = b.trajectories[g];
    traj = decoding::sample(old_policy, b.prompt, spec.draw(r), generator, cfg.temperature, r);
    b.rewards[g] = task.reward(traj.prompt, traj.tokens);
    b.old_logprobs[g] = likelihood::traj_loglik(old_policy, traj, cfg.estimator).logprobs();
    if (with_ref) b.ref_logprobs[g] = likelihood::traj_loglik(*ref, traj, cfg.estimator).logprobs();
  });
  b.advantages = compute_advantages(b.rewards, cfg.advantage_norm);

  if (flops) {
    OpTrace trace;
    for (const auto& t : b.trajectories) {
      trace.forward_only.insert(trace.forward_only.end(), static_cast<std::size_t>(t.steps()),
                                t.prompt.size() + t.tokens.size());
      const auto passes = scoring_passes(t, cfg.estimator);
      for (int k = 0; k < (with_ref ? 2 : 1); ++k)
        trace.forward_only.insert(trace.forward_only.end(), passes.begin(), passes.end());
    }
    *flops += estimate_flops(old_policy.config, trace);
  }
  return b;
}

double evaluate(const model::ModelParams& params, const tasks::Task& task,
                const decoding::ScheduleSpec& spec, Generator generator, int n_prompts,
                double temperature, std::uint64_t seed) {
  if (n_prompts < 1) throw ConfigError("evaluate needs at least one prompt");
  std::vector<double> rewards(static_cast<std::size_t>(n_prompts));
  parallel_for(static_cast<std::size_t>(n_prompts), [&](std::size_t i) {
    Rng r = Rng::stream({seed, kEvalStream, static_cast<std::uint64_t>(i)});
    const auto prompt = task.sample_prompt(r);
    const auto traj = decoding::sample(params, prompt, spec.draw(r), generator, temperature, r);
    rewards[i] = task.reward(traj.prompt, traj.tokens);
  });
  double sum = 0.0;
  for (double x : rewards) sum += x;
  return sum / n_prompts;
}

TrainResult train(const model::ModelParams& init, const tasks::Task& task,
                  const decoding::ScheduleSpec& spec, Generator generator,
                  const TrainerConfig& cfg, const TrainCallbacks& callbacks) {
  cfg.validate();
  if (spec.length != task.completion_length())
    throw ConfigError("schedule.length " + std::to_string(spec.length) +
                      " does not match task completion length " +
                      std::to_string(task.completion_length()));
  if (init.config.vocab_size != task.vocab_size())
    throw ConfigError("model.vocab_size " + std::to_string(init.config.vocab_size) +
                      " does not match task vocabulary " + std::to_string(task.vocab_size()));

  TrainState st;
  st.theta = init.snapshot(model::Role::policy);
  st.ref = init.snapshot(model::Role::reference);
  st.optimizer = Optimizer(cfg, st.theta);
  TrainResult result;
  LossTerms last;

  const auto record = [&]() {
    MetricsRecord m;
    m.step = st.step;
    m.flops = st.flops;
    m.mean_reward =
        evaluate(st.theta, task, spec, generator, cfg.eval_prompts, cfg.temperature, cfg.seed);
    m.loss = last.loss;
    m.kl = last.kl;
    m.clip_fraction = last.clip_fraction;
    result.metrics.push_back(m);
    if (callbacks.on_metrics) callbacks.on_metrics(m);
    if (callbacks.on_eval) callbacks.on_eval(st);
  };

  record();
  std::uint64_t next_eval = cfg.eval_interval_flops;
  for (;;) {
    if (cfg.max_steps > 0 && st.step >= cfg.max_steps) break;
    if (cfg.flop_budget > 0 && st.flops >= cfg.flop_budget) break;

    st.theta_old = st.theta.snapshot(model::Role::stale);
    std::vector<GroupBatch> batches;
    for (int b = 0; b < cfg.batch_prompts; ++b) {
      const auto ub = static_cast<std::uint64_t>(b);
      Rng pr = Rng::stream({cfg.seed, kPromptStream, static_cast<std::uint64_t>(st.step), ub});
      batches.push_back(sample_group(st.theta_old, &st.ref, task, task.sample_prompt(pr), spec,
                                     generator, cfg, static_cast<std::uint64_t>(st.step), ub,
                                     &st.flops));
    }

    LossTerms sum;
    for (int it = 0; it < cfg.inner_updates; ++it) {
      std::vector<std::vector<double>> grads;
      LossTerms terms;
      try {
        terms = grpo_loss(st.theta, batches, cfg, &grads);
        if (!std::isfinite(terms.loss)) throw NumericError("loss is " + std::to_string(terms.loss));
        for (const auto& g : grads)
          for (double x : g)
            if (!std::isfinite(x)) throw NumericError("non-finite gradient entry");
      } catch (const NumericError& e) {
        nlohmann::json dump;
        dump["step"] = st.step;
        dump["inner_update"] = it;
        dump["error"] = e.what();
        dump["batches"] = nlohmann::json::array();
        for (const auto& b : batches) dump["batches"].push_back(to_json(b));
        throw NonFiniteLoss("training aborted at step " + std::to_string(st.step) + ": " + e.what(),
                            std::move(dump));
      }
      st.optimizer.step(st.theta, grads);
      st.flops += terms.flops;
      sum.loss += terms.loss;
      sum.kl += terms.kl;
      sum.clip_fraction += terms.clip_fraction;
    }
    const double inv = 1.0 / cfg.inner_updates;
    last = {sum.loss * inv, sum.kl * inv, sum.clip_fraction * inv, 0};
    ++st.step;

    if (cfg.eval_interval_flops == 0 || st.flops >= next_eval) {
      record();
      while (cfg.eval_interval_flops > 0 && next_eval <= st.flops) next_eval += cfg.eval_interval_flops;
    }
  }
  if (result.metrics.back().step != st.step) record();

  result.params = st.theta;
  result.steps = st.step;
  result.flops = st.flops;
  return result;
}

}  // namespace d2::rltrain
