#include <doctest.h>

#include <cmath>

#include "d2/decoding.hpp"
#include "d2/error.hpp"
#include "d2/likelihood.hpp"
#include "support.hpp"

using namespace d2;
using namespace d2::decoding;

TEST_CASE("fixed-k schedule sizes") {
  Rng r(1);
  const auto a = make_schedule(4, 2, 2, SelectionPolicy::random, r);
  CHECK(a.step_sizes == std::vector<int>{2, 2});
  CHECK(a.unmask[0].size() == 2);
  CHECK(a.unmask[1].size() == 2);
  const auto b = make_schedule(5, 3, 2, SelectionPolicy::random, r);
  CHECK(b.step_sizes == std::vector<int>{1, 2, 2});
  CHECK_NOTHROW(b.validate());
  CHECK_THROWS_AS(make_schedule(5, 2, 2, SelectionPolicy::random, r), ConfigError);
  CHECK_THROWS_AS(make_schedule(4, 3, 2, SelectionPolicy::random, r), ConfigError);
}

TEST_CASE("random schedules replay under a fixed seed") {
  Rng a(77), b(77);
  for (int i = 0; i < 20; ++i)
    CHECK(make_schedule(8, 4, 2, SelectionPolicy::random, a).unmask ==
          make_schedule(8, 4, 2, SelectionPolicy::random, b).unmask);
}

TEST_CASE("context tokens mask everything not yet decoded") {
  const auto s = schedule_from_sets(1, {{2}, {0}, {1}});
  const std::vector<int> prompt{7}, tokens{4, 5, 6};
  CHECK(context_tokens(prompt, tokens, s.decode_steps(), 2, 9) == std::vector<int>{7, 9, 9, 9});
  CHECK(context_tokens(prompt, tokens, s.decode_steps(), 1, 9) == std::vector<int>{7, 9, 5, 9});
  CHECK(context_tokens(prompt, tokens, s.decode_steps(), 0, 9) == std::vector<int>{7, 4, 5, 9});
}

TEST_CASE("greedy sampling is deterministic") {
  const auto p = testing::tiny_model(5, 4);
  const std::vector<int> prompt{1, 2};
  Rng s(3);
  const auto sched = make_schedule(4, 2, 2, SelectionPolicy::random, s);
  Rng r1(10), r2(99);
  const auto a = sample(p, prompt, sched, Generator::any_order, 0.0, r1);
  const auto b = sample(p, prompt, sched, Generator::any_order, 0.0, r2);
  CHECK(a.tokens == b.tokens);
  CHECK(a.logprobs == b.logprobs);
}

TEST_CASE("recorded log-probs match recomputation from the stored contexts") {
  for (Generator g : {Generator::any_order, Generator::bidirectional}) {
    const auto p = testing::tiny_model(6, 5);
    Rng r(8);
    for (int trial = 0; trial < 10; ++trial) {
      const std::vector<int> prompt{static_cast<int>(r.below(6)), static_cast<int>(r.below(6))};
      const auto traj = sample(p, prompt, make_schedule(6, 3, 2, SelectionPolicy::random, r), g, 1.0, r);
      const auto full = likelihood::traj_loglik_full(p, traj);
      double recorded = 0.0;
      for (double x : traj.logprobs) recorded += x;
      CHECK(std::abs(full.total - recorded) < 1e-9);

      const auto ts = traj.decode_steps();
      const auto masks = step_masks(traj.schedule, g, 2);
      for (int l = 0; l < 6; ++l) {
        const int t = ts[static_cast<std::size_t>(l)];
        const auto ctx = context_tokens(traj.prompt, traj.tokens, ts, t, p.config.mask_id());
        const auto logits = model::forward_logits(p, ctx, model::sequential_positions(ctx.size()),
                                                  masks[static_cast<std::size_t>(t)]);
        const std::size_t row = 2 + static_cast<std::size_t>(l);
        double mx = -INFINITY;
        for (std::size_t v = 0; v < 6; ++v) mx = std::max(mx, logits(row, v));
        double z = 0.0;
        for (std::size_t v = 0; v < 6; ++v) z += std::exp(logits(row, v) - mx);
        const double expect = logits(row, static_cast<std::size_t>(traj.tokens[static_cast<std::size_t>(l)])) - mx - std::log(z);
        CHECK(std::abs(traj.logprobs[static_cast<std::size_t>(l)] - expect) < 1e-12);
      }
    }
  }
}

TEST_CASE("a single step decodes everything with no earlier positions") {
  const auto p = testing::tiny_model(4, 6);
  Rng r(2);
  const std::vector<int> prompt{1};
  const auto traj = sample(p, prompt, make_schedule(3, 1, 3, SelectionPolicy::random, r),
                           Generator::any_order, 1.0, r);
  for (int l = 0; l < 3; ++l) CHECK(traj.earlier_positions(l).empty());
}

TEST_CASE("top-confidence sampling realizes a valid schedule") {
  const auto p = testing::tiny_model(5, 7);
  Rng r(4);
  const std::vector<int> prompt{3};
  const auto traj = sample(p, prompt, make_schedule(5, 3, 2, SelectionPolicy::top_confidence, r),
                           Generator::any_order, 1.0, r);
  CHECK(traj.schedule.realized());
  CHECK_NOTHROW(traj.validate(p.config.mask_id()));
  CHECK(std::abs(likelihood::traj_loglik_full(p, traj).total -
                 (traj.logprobs[0] + traj.logprobs[1] + traj.logprobs[2] + traj.logprobs[3] + traj.logprobs[4])) < 1e-9);
}

TEST_CASE("decoding masks pass the causality check") {
  Rng r(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int L = 1 + static_cast<int>(r.below(8));
    const int k = 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(L)));
    const int T = (L + k - 1) / k;
    const int lp = static_cast<int>(r.below(3));
    const auto s = make_schedule(L, T, k, SelectionPolicy::random, r);
    const auto rep = check_any_order_causal(step_masks(s, Generator::any_order, lp), s, lp);
    CHECK(rep.passed());
    CHECK(rep.reasonable);
  }
}

TEST_CASE("bidirectional masks attend to future masks") {
  Rng r(6);
  const auto s = make_schedule(4, 2, 2, SelectionPolicy::random, r);
  const auto rep = check_any_order_causal(step_masks(s, Generator::bidirectional, 1), s, 1);
  CHECK_FALSE(rep.no_future_when_decoded);
  CHECK_FALSE(rep.passed());
  bool found = false;
  for (const auto& w : rep.witnesses) found = found || w.condition == 2;
  CHECK(found);
}

TEST_CASE("a changing attention set after decoding breaks consistency") {
  // L = 3, one token per step: position 0 first, then 1, then 2.
  const auto s = schedule_from_sets(1, {{2}, {1}, {0}});
  auto masks = step_masks(s, Generator::any_order, 0);
  // Let position 0 drop its own key at step 0 only.
  masks[0].set(0, 0, false);
  const auto rep = check_any_order_causal(masks, s, 0);
  CHECK_FALSE(rep.consistent_attention);
  REQUIRE_FALSE(rep.witnesses.empty());
  CHECK(rep.witnesses[0].condition == 1);
  CHECK(rep.witnesses[0].position == 0);
}

TEST_CASE("trajectories round-trip through JSON") {
  const auto p = testing::tiny_model(5, 8);
  Rng r(9);
  const std::vector<int> prompt{1, 4};
  const auto traj = sample(p, prompt, make_schedule(5, 3, 2, SelectionPolicy::random, r),
                           Generator::any_order, 1.0, r);
  const auto j = to_json(traj);
  const auto back = trajectory_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.prompt == traj.prompt);
  CHECK(back.tokens == traj.tokens);
  CHECK(back.schedule.unmask == traj.schedule.unmask);
  CHECK(back.logprobs == traj.logprobs);
  CHECK(back.generator == traj.generator);
  CHECK_THROWS_AS(trajectory_from_json(nlohmann::json::parse(R"({"tokens": [1]})")), FormatError);
}
