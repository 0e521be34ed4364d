#include <cmath>
#include <functional>

#include "d2/error.hpp"
#include "d2/oracle.hpp"

namespace d2::oracle {

namespace dm = d2::diffmath;

std::vector<int> ScheduleFamily::step_sizes() const {
  if (kind == Kind::fixed) return schedule.step_sizes;
  Rng unused(0);
  decoding::ScheduleSpec s = spec;
  s.policy = SelectionPolicy::top_confidence;  // sizes only, no draw
  return decoding::make_schedule(s.length, s.steps, s.tokens_per_step, s.policy, unused).step_sizes;
}

namespace {

std::uint64_t binomial(int n, int k) {
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

std::uint64_t ipow(std::uint64_t b, int e) {
  std::uint64_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

void check_budget(const ScheduleFamily& f, int vocab, const EnumerationBudget& b) {
  if (f.length() > b.max_length || vocab > b.max_vocab || f.steps() > b.max_steps)
    throw BudgetError("enumeration limited to L <= " + std::to_string(b.max_length) + ", V <= " +
                      std::to_string(b.max_vocab) + ", T <= " + std::to_string(b.max_steps) +
                      "; got L = " + std::to_string(f.length()) + ", V = " + std::to_string(vocab) +
                      ", T = " + std::to_string(f.steps()));
  const auto n = trajectory_count(f, vocab);
  if (n > b.max_trajectories)
    throw BudgetError("enumeration of " + std::to_string(n) + " trajectories exceeds budget " +
                      std::to_string(b.max_trajectories));
}

// Subsets of `pool` of size k, in lexicographic order.
void combinations(const std::vector<int>& pool, int k, std::vector<std::vector<int>>& out) {
  std::vector<int> cur;
  std::function<void(std::size_t)> rec = [&](std::size_t start) {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(cur);
      return;
    }
    for (std::size_t i = start; i < pool.size(); ++i) {
      cur.push_back(pool[i]);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
}

}  // namespace

std::uint64_t trajectory_count(const ScheduleFamily& family, int vocab) {
  std::uint64_t orders = 1;
  if (family.kind == ScheduleFamily::Kind::random_order) {
    int remaining = family.length();
    const auto sizes = family.step_sizes();
    for (int t = family.steps() - 1; t >= 0; --t) {
      orders *= binomial(remaining, sizes[static_cast<std::size_t>(t)]);
      remaining -= sizes[static_cast<std::size_t>(t)];
    }
  }
  return orders * ipow(static_cast<std::uint64_t>(vocab), family.length());
}

// Depth-first walk over (unmask set, token values) choices. At each visited
// state one forward pass on `tape` serves every choice of U_t, since the
// still-masked rows do not see which of them is decoded next.
struct Walker {
  Walker(dm::Tape& t, const model::BoundModel& m, std::span<const int> p, const ScheduleFamily& f,
         Generator g)
      : tape(t), model(m), prompt(p), family(f), generator(g) {}

  dm::Tape& tape;
  const model::BoundModel& model;
  std::span<const int> prompt;
  const ScheduleFamily& family;
  Generator generator;
  std::vector<int> sizes;
  int L = 0;
  int V = 0;
  // Leaf callback: trajectory (logprobs filled), order prob, sum-of-logprob Var.
  std::function<void(Trajectory&, double, dm::Var)> on_leaf;

  DecodeSchedule sched;
  std::vector<int> tokens;

  void run() {
    L = family.length();
    V = model.config->vocab_size;
    sizes = family.step_sizes();
    sched.steps = family.steps();
    sched.length = L;
    sched.tokens_per_step = family.spec.tokens_per_step;
    sched.policy = SelectionPolicy::random;
    sched.step_sizes = sizes;
    sched.unmask.assign(static_cast<std::size_t>(sched.steps), {});
    tokens.assign(static_cast<std::size_t>(L), 0);
    visit(sched.steps - 1, 1.0, {}, std::vector<double>(static_cast<std::size_t>(L), 0.0));
  }

  void visit(int t, double order_prob, std::vector<dm::Var> path, std::vector<double> logps) {
    if (t < 0) {
      Trajectory traj;
      traj.prompt.assign(prompt.begin(), prompt.end());
      traj.tokens = tokens;
      traj.schedule = sched;
      traj.logprobs = logps;
      traj.generator = generator;
      dm::Var total = path.size() == 1 ? path[0] : dm::sum(tape, dm::concat(tape, path));
      on_leaf(traj, order_prob, total);
      return;
    }
    const auto ts = sched.decode_steps();
    const auto ctx = context_tokens(prompt, tokens, ts, t, model.config->mask_id());
    const auto mask = decoding::step_mask(sched, generator, t, static_cast<int>(prompt.size()));
    const dm::Var logits =
        model::forward(tape, model, ctx, model::sequential_positions(ctx.size()), mask);
    const dm::Var logp = dm::log_softmax_rows(tape, logits);
    const auto lv = tape.values(logp);

    std::vector<std::vector<int>> choices;
    double choice_prob = 1.0;
    if (family.kind == ScheduleFamily::Kind::fixed) {
      choices.push_back(family.schedule.unmask[static_cast<std::size_t>(t)]);
    } else {
      std::vector<int> pool;
      for (int l = 0; l < L; ++l)
        if (ts[static_cast<std::size_t>(l)] < 0) pool.push_back(l);
      combinations(pool, sizes[static_cast<std::size_t>(t)], choices);
      choice_prob = 1.0 / static_cast<double>(choices.size());
    }
    const std::size_t lp = prompt.size();
    for (const auto& u : choices) {
      sched.unmask[static_cast<std::size_t>(t)] = u;
      const std::size_t k = u.size();
      std::vector<int> vals(k, 0);
      for (;;) {
        std::vector<std::size_t> rows;
        std::vector<int> cols;
        auto next_logps = logps;
        for (std::size_t i = 0; i < k; ++i) {
          const auto l = static_cast<std::size_t>(u[i]);
          tokens[l] = vals[i];
          rows.push_back(lp + l);
          cols.push_back(vals[i]);
          next_logps[l] = lv[(lp + l) * static_cast<std::size_t>(V) + static_cast<std::size_t>(vals[i])];
        }
        auto next_path = path;
        if (k > 0) next_path.push_back(dm::sum(tape, dm::gather(tape, logp, rows, cols)));
        visit(t - 1, order_prob * choice_prob, std::move(next_path), std::move(next_logps));
        std::size_t i = 0;
        while (i < k && ++vals[i] == V) vals[i++] = 0;
        if (i == k) break;
      }
      for (int l : u) tokens[static_cast<std::size_t>(l)] = 0;
    }
    sched.unmask[static_cast<std::size_t>(t)].clear();
  }
};

std::vector<EnumeratedTrajectory> enumerate_trajectories(const model::ModelParams& params,
                                                         std::span<const int> prompt,
                                                         const ScheduleFamily& family,
                                                         Generator generator,
                                                         const EnumerationBudget& budget) {
  check_budget(family, params.config.vocab_size, budget);
  dm::Tape tape(dm::Tape::Mode::no_grad);
  const auto bound = model::bind(tape, params);
  std::vector<EnumeratedTrajectory> out;
  Walker w{tape, bound, prompt, family, generator};
  w.on_leaf = [&](Trajectory& traj, double order_prob, dm::Var) {
    double lp = 0.0;
    for (double x : traj.logprobs) lp += x;
    out.push_back({traj, order_prob, order_prob * std::exp(lp)});
  };
  w.run();
  return out;
}

namespace {

std::vector<double> flatten_grads(const dm::Tape& tape, const model::BoundModel& m) {
  std::vector<double> g;
  for (const auto& v : m.vars) {
    auto gv = tape.grad_copy(v);
    g.insert(g.end(), gv.begin(), gv.end());
  }
  return g;
}

}  // namespace

std::vector<double> exact_policy_gradient(const model::ModelParams& params,
                                          std::span<const int> prompt,
                                          const ScheduleFamily& family, Generator generator,
                                          const RewardFn& reward,
                                          const EnumerationBudget& budget) {
  check_budget(family, params.config.vocab_size, budget);
  dm::Tape tape;
  const auto bound = model::bind(tape, params);
  std::vector<dm::Var> terms;
  Walker w{tape, bound, prompt, family, generator};
  w.on_leaf = [&](Trajectory& traj, double order_prob, dm::Var total_logp) {
    const double r = reward(traj.prompt, traj.tokens);
    terms.push_back(dm::scale(tape, dm::exp(tape, total_logp), order_prob * r));
  };
  w.run();
  const dm::Var objective = dm::sum(tape, dm::concat(tape, terms));
  tape.backward(objective);
  return flatten_grads(tape, bound);
}

}  // namespace d2::oracle
