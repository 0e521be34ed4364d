#include <algorithm>
#include <cmath>
#include <numeric>

#include "d2/decoding.hpp"
#include "d2/error.hpp"

namespace d2::decoding {

namespace dm = d2::diffmath;

DecodeSchedule make_schedule(int length, int steps, int tokens_per_step, SelectionPolicy policy,
                             Rng& rng) {
  if (length < 1 || steps < 1 || tokens_per_step < 1)
    throw ConfigError("schedule needs L >= 1, T >= 1 and k >= 1");
  if (static_cast<long>(tokens_per_step) * steps < length)
    throw ConfigError("schedule: k*T = " + std::to_string(tokens_per_step * steps) +
                      " cannot cover L = " + std::to_string(length));
  if (static_cast<long>(tokens_per_step) * (steps - 1) >= length)
    throw ConfigError("schedule: k*(T-1) >= L leaves step 0 with nothing to decode");

  DecodeSchedule s;
  s.steps = steps;
  s.length = length;
  s.tokens_per_step = tokens_per_step;
  s.policy = policy;
  s.step_sizes.assign(static_cast<std::size_t>(steps), tokens_per_step);
  s.step_sizes[0] = length - tokens_per_step * (steps - 1);
  s.unmask.assign(static_cast<std::size_t>(steps), {});
  if (policy == SelectionPolicy::random) {
    std::vector<int> order(static_cast<std::size_t>(length));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::size_t next = 0;
    for (int t = steps - 1; t >= 0; --t) {
      auto& u = s.unmask[static_cast<std::size_t>(t)];
      for (int i = 0; i < s.step_sizes[static_cast<std::size_t>(t)]; ++i) u.push_back(order[next++]);
      std::sort(u.begin(), u.end());
    }
  }
  return s;
}

DecodeSchedule schedule_from_sets(int tokens_per_step, std::vector<std::vector<int>> sets) {
  DecodeSchedule s;
  s.steps = static_cast<int>(sets.size());
  s.tokens_per_step = tokens_per_step;
  s.policy = SelectionPolicy::random;
  for (auto& u : sets) {
    std::sort(u.begin(), u.end());
    s.step_sizes.push_back(static_cast<int>(u.size()));
    s.length += static_cast<int>(u.size());
  }
  s.unmask = std::move(sets);
  s.validate();
  return s;
}

model::AttentionMaskMatrix step_mask(const DecodeSchedule& schedule, Generator generator,
                                     int step, int prompt_len) {
  if (generator == Generator::bidirectional) {
    if (step < 0 || step >= schedule.steps) throw ConfigError("step outside schedule");
    return model::build_bidirectional_mask(prompt_len, schedule.length);
  }
  return model::build_decoding_mask(schedule, step, prompt_len);
}

std::vector<model::AttentionMaskMatrix> step_masks(const DecodeSchedule& schedule,
                                                   Generator generator, int prompt_len) {
  std::vector<model::AttentionMaskMatrix> out;
  out.reserve(static_cast<std::size_t>(schedule.steps));
  for (int t = 0; t < schedule.steps; ++t) out.push_back(step_mask(schedule, generator, t, prompt_len));
  return out;
}

namespace {

int draw_token(std::span<const double> logits, double temperature, Rng& rng) {
  if (temperature <= 0.0) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double z = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) z += (w[v] = std::exp((logits[v] - mx) / temperature));
  double u = rng.uniform() * z;
  for (std::size_t v = 0; v < w.size(); ++v) {
    u -= w[v];
    if (u < 0.0) return static_cast<int>(v);
  }
  return static_cast<int>(w.size() - 1);
}

}  // namespace

Trajectory sample(const model::ModelParams& params, std::span<const int> prompt,
                  DecodeSchedule schedule, Generator generator, double temperature, Rng& rng) {
  const model::ModelConfig& c = params.config;
  const int L = schedule.length;
  const int lp = static_cast<int>(prompt.size());
  const auto V = static_cast<std::size_t>(c.vocab_size);
  if (schedule.policy == SelectionPolicy::top_confidence)
    schedule.unmask.assign(static_cast<std::size_t>(schedule.steps), {});

  Trajectory traj;
  traj.prompt.assign(prompt.begin(), prompt.end());
  traj.tokens.assign(static_cast<std::size_t>(L), 0);
  traj.logprobs.assign(static_cast<std::size_t>(L), 0.0);
  traj.generator = generator;
  const auto positions = model::sequential_positions(static_cast<std::size_t>(lp + L));

  for (int t = schedule.steps - 1; t >= 0; --t) {
    const auto ts = schedule.decode_steps();
    const auto ctx = context_tokens(prompt, traj.tokens, ts, t, c.mask_id());
    const auto mask = step_mask(schedule, generator, t, lp);

    dm::Tape tape(dm::Tape::Mode::no_grad);
    const auto bound = model::bind(tape, params);
    const dm::Var logits = model::forward(tape, bound, ctx, positions, mask);
    const dm::Var logp = dm::log_softmax_rows(tape, logits);
    auto lv = tape.values(logits);
    auto pv = tape.values(logp);

    auto& u = schedule.unmask[static_cast<std::size_t>(t)];
    if (schedule.policy == SelectionPolicy::top_confidence) {
      std::vector<std::pair<double, int>> conf;
      for (int l = 0; l < L; ++l) {
        if (ts[static_cast<std::size_t>(l)] >= 0) continue;
        const auto row = pv.subspan(static_cast<std::size_t>(lp + l) * V, V);
        conf.emplace_back(-*std::max_element(row.begin(), row.end()), l);
      }
      std::sort(conf.begin(), conf.end());
      u.clear();
      for (int i = 0; i < schedule.step_sizes[static_cast<std::size_t>(t)]; ++i)
        u.push_back(conf.at(static_cast<std::size_t>(i)).second);
      std::sort(u.begin(), u.end());
    }
    for (int l : u) {
      const std::size_t row = static_cast<std::size_t>(lp + l) * V;
      const int tok = draw_token(lv.subspan(row, V), temperature, rng);
      traj.tokens[static_cast<std::size_t>(l)] = tok;
      traj.logprobs[static_cast<std::size_t>(l)] = pv[row + static_cast<std::size_t>(tok)];
    }
  }
  traj.schedule = std::move(schedule);
  traj.schedule.validate();
  return traj;
}

}  // namespace d2::decoding
