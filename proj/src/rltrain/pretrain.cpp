#include <algorithm>
#include <numeric>

#include "d2/parallel.hpp"
#include "d2/rltrain.hpp"

namespace d2::rltrain {

namespace dm = d2::diffmath;

namespace {

// Negative mean log-likelihood of the masked slots under full attention,
// with a uniformly drawn number of masked positions.
dm::Var bidirectional_loss(dm::Tape& tape, const model::BoundModel& m,
                           std::span<const int> prompt, std::span<const int> target, Rng& r) {
  const int L = static_cast<int>(target.size());
  const auto lp = prompt.size();
  std::vector<int> order(target.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), r.engine());
  const int masked = 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(L)));
  order.resize(static_cast<std::size_t>(masked));
  std::sort(order.begin(), order.end());

  std::vector<int> input(prompt.begin(), prompt.end());
  input.insert(input.end(), target.begin(), target.end());
  std::vector<std::size_t> rows;
  std::vector<int> cols;
  for (int l : order) {
    input[lp + static_cast<std::size_t>(l)] = m.config->mask_id();
    rows.push_back(lp + static_cast<std::size_t>(l));
    cols.push_back(target[static_cast<std::size_t>(l)]);
  }
  const auto mask = model::build_bidirectional_mask(static_cast<int>(lp), L);
  const auto logits = model::forward(tape, m, input, model::sequential_positions(input.size()), mask);
  const auto picked = dm::gather(tape, dm::log_softmax_rows(tape, logits), rows, cols);
  return dm::scale(tape, dm::mean(tape, picked), -1.0);
}

}  // namespace

double pretrain(model::ModelParams& params, const tasks::Task& task,
                const decoding::ScheduleSpec& spec, Generator generator,
                const PretrainConfig& cfg, Optimizer* optimizer) {
  if (cfg.steps < 0 || cfg.batch_size < 1) throw ConfigError("pretrain needs steps >= 0, batch_size >= 1");
  if (spec.length != task.completion_length())
    throw ConfigError("pretrain: schedule length does not match the task");
  TrainerConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.max_grad_norm = cfg.max_grad_norm;
  Optimizer local(tc, params);
  Optimizer& opt = optimizer ? *optimizer : local;
  decoding::ScheduleSpec order_spec = spec;
  order_spec.policy = SelectionPolicy::random;

  const auto B = static_cast<std::size_t>(cfg.batch_size);
  double last = 0.0;
  for (int s = 0; s < cfg.steps; ++s) {
    const auto step_key = static_cast<std::uint64_t>(cfg.step_offset + s);
    std::vector<double> losses(B);
    std::vector<std::vector<std::vector<double>>> item_grads(B);
    parallel_for(B, [&](std::size_t i) {
      Rng r = Rng::stream({cfg.seed, step_key, i});
      const auto prompt = task.sample_prompt(r);
      const auto target = task.demonstrate(prompt, r);
      dm::Tape tape;
      const auto bound = model::bind(tape, params);
      dm::Var loss;
      if (generator == Generator::bidirectional) {
        loss = bidirectional_loss(tape, bound, prompt, target, r);
      } else {
        Trajectory traj;
        traj.prompt = prompt;
        traj.tokens = target;
        traj.schedule = order_spec.draw(r);
        traj.generator = Generator::any_order;
        const auto scored = likelihood::score_tokens(tape, bound, traj, likelihood::Estimator::oneshot());
        loss = dm::scale(tape, dm::mean(tape, scored.logprobs), -1.0);
      }
      losses[i] = tape.scalar(loss);
      tape.backward(loss);
      for (const auto& v : bound.vars) item_grads[i].push_back(tape.grad_copy(v));
    });
    std::vector<std::vector<double>> grads(params.tensors.size());
    for (std::size_t p = 0; p < grads.size(); ++p) grads[p].assign(params.tensors[p].size(), 0.0);
    last = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      last += losses[i];
      for (std::size_t p = 0; p < grads.size(); ++p)
        for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += item_grads[i][p][j];
    }
    for (auto& g : grads)
      for (double& x : g) x /= static_cast<double>(B);
    last /= static_cast<double>(B);
    opt.step(params, grads);
  }
  return last;
}

}  // namespace d2::rltrain
