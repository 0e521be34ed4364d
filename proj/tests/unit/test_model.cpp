#include <doctest.h>

#include <algorithm>
#include <set>

#include "d2/decoding.hpp"
#include "d2/error.hpp"
#include "d2/model.hpp"
#include "support.hpp"

using namespace d2;
using namespace d2::model;

namespace {

std::set<std::size_t> row_set(const AttentionMaskMatrix& m, std::size_t q) {
  const auto r = m.row(q);
  return {r.begin(), r.end()};
}

// Prompt P1 P2, completion A B C D E decoded {A, C}, then {E}, then {B, D}.
DecodeSchedule figure_schedule() { return decoding::schedule_from_sets(2, {{1, 3}, {4}, {0, 2}}); }

}  // namespace

TEST_CASE("decoding mask at the step that decodes E") {
  const auto s = figure_schedule();
  const auto m = build_decoding_mask(s, 1, 2);
  // slots: P1=0 P2=1 A=2 B=3 C=4 D=5 E=6
  CHECK(row_set(m, 6) == std::set<std::size_t>{0, 1, 2, 4, 6});
  CHECK(row_set(m, 2) == std::set<std::size_t>{0, 1, 2, 4});
  CHECK(row_set(m, 0) == std::set<std::size_t>{0, 1});
}

TEST_CASE("left-to-right schedule gives a causal triangle over the decoded prefix") {
  const int L = 5;
  std::vector<std::vector<int>> sets(L);
  for (int l = 0; l < L; ++l) sets[static_cast<std::size_t>(L - 1 - l)] = {l};
  const auto s = decoding::schedule_from_sets(1, sets);
  const auto m = build_decoding_mask(s, 0, 0);
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t k = 0; k < 5; ++k) CHECK(m.allows(q, k) == (k <= q));
}

TEST_CASE("bidirectional masks") {
  const auto a = build_bidirectional_mask(0, 3);
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t k = 0; k < 3; ++k) CHECK(a.allows(q, k));
  const auto b = build_bidirectional_mask(2, 5);
  CHECK(b.size() == 7);
  for (std::size_t q = 2; q < 7; ++q)
    for (std::size_t k = 0; k < 7; ++k) CHECK(b.allows(q, k));
  CHECK(row_set(b, 0) == std::set<std::size_t>{0, 1});
}

TEST_CASE("one-shot layout for the worked trajectory") {
  Trajectory traj;
  traj.prompt = {1, 2};
  traj.tokens = {3, 4, 5, 6, 7};
  traj.schedule = figure_schedule();
  traj.logprobs.assign(5, 0.0);
  const auto in = build_oneshot_mask(traj, 9);
  CHECK(in.tokens == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 9, 9, 9, 9, 9});
  CHECK(in.positions.pos == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 2, 3, 4, 5, 6});
  // mask slot of E is 11; it sees the prompt, A, C and itself
  CHECK(row_set(in.mask, 11) == std::set<std::size_t>{0, 1, 2, 4, 11});
  // A and C were decoded first, so their mask slots see the prompt and themselves only
  CHECK(row_set(in.mask, 7) == std::set<std::size_t>{0, 1, 7});
  CHECK(row_set(in.mask, 9) == std::set<std::size_t>{0, 1, 9});
}

TEST_CASE("one-shot mask queries never see their own or later-decoded clean tokens") {
  Rng r(41);
  for (int trial = 0; trial < 200; ++trial) {
    const int L = 1 + static_cast<int>(r.below(8));
    const int k = 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(L)));
    const int T = (L + k - 1) / k;
    Trajectory traj;
    traj.prompt.assign(r.below(3), 0);
    traj.tokens.assign(static_cast<std::size_t>(L), 1);
    traj.logprobs.assign(static_cast<std::size_t>(L), 0.0);
    traj.schedule = decoding::make_schedule(L, T, k, SelectionPolicy::random, r);
    const auto in = build_oneshot_mask(traj, 5);
    const auto ts = traj.decode_steps();
    const std::size_t lp = traj.prompt.size();
    for (int l = 0; l < L; ++l) {
      const std::size_t q = lp + static_cast<std::size_t>(L + l);
      for (int j = 0; j < L; ++j) {
        const bool sees = in.mask.allows(q, lp + static_cast<std::size_t>(j));
        if (ts[static_cast<std::size_t>(j)] <= ts[static_cast<std::size_t>(l)]) CHECK_FALSE(sees);
      }
    }
  }
}

TEST_CASE("forward is deterministic") {
  const auto p = testing::tiny_model(6, 1);
  const std::vector<int> toks{1, 2, 6, 6, 3};
  const auto pos = sequential_positions(5);
  const auto mask = build_bidirectional_mask(2, 3);
  CHECK(forward_logits(p, toks, pos, mask).values == forward_logits(p, toks, pos, mask).values);
}

TEST_CASE("all-mask input without position signal gives identical logits on every slot") {
  Rng r(3);
  auto p = init_params(testing::tiny_config(6), r);
  for (double& v : p.tensors[p.index_of("pos_emb")].values) v = 0.0;
  const std::vector<int> toks(5, p.config.mask_id());
  const auto out = forward_logits(p, toks, sequential_positions(5), build_bidirectional_mask(0, 5));
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t v = 0; v < 6; ++v) CHECK(out(i, v) == out(0, v));
}

TEST_CASE("swapping two mutually invisible slots leaves the others unchanged") {
  const auto p = testing::tiny_model(6, 2, 0.5, 8, 1);
  Rng r(5);
  const std::size_t n = 6, a = 1, b = 4;
  AttentionMaskMatrix m(n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k)
      if (q == k || (r.uniform() < 0.6 && !((q == a && k == b) || (q == b && k == a)))) m.set(q, k);
  std::vector<int> toks{0, 1, 2, 3, 4, 5};
  auto pos = sequential_positions(n);

  const auto swap_index = [&](std::size_t i) { return i == a ? b : i == b ? a : i; };
  AttentionMaskMatrix m2(n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) m2.set(swap_index(q), swap_index(k), m.allows(q, k));
  auto toks2 = toks;
  auto pos2 = pos;
  std::swap(toks2[a], toks2[b]);
  std::swap(pos2.pos[a], pos2.pos[b]);

  const auto x = forward_logits(p, toks, pos, m);
  const auto y = forward_logits(p, toks2, pos2, m2);
  for (std::size_t q = 0; q < n; ++q) {
    if (q == a || q == b) continue;
    for (std::size_t v = 0; v < 6; ++v) CHECK(std::abs(x(q, v) - y(q, v)) < 1e-12);
  }
  for (std::size_t v = 0; v < 6; ++v) CHECK(std::abs(x(a, v) - y(b, v)) < 1e-12);
}

TEST_CASE("forward FLOPs match a hand count and the tape counter") {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.max_positions = 32;
  const std::uint64_t S = 10, d = 32, ff = 128, V = 12;
  const std::uint64_t layer = 4 * 2 * S * d * d + 2 * 2 * S * S * d + 2 * 2 * S * d * ff;
  CHECK(forward_flops(c, S) == 2 * layer + 2 * S * d * V);

  Rng r(1);
  const auto p = init_params(c, r);
  diffmath::Tape t(diffmath::Tape::Mode::no_grad);
  const auto bound = bind(t, p);
  const std::vector<int> toks(S, 1);
  forward(t, bound, toks, sequential_positions(S), build_bidirectional_mask(2, 8));
  CHECK(t.matmul_flops() == forward_flops(c, S));
}

TEST_CASE("forward counts its calls") {
  const auto p = testing::tiny_model(4, 3);
  const auto before = forward_pass_count();
  const std::vector<int> toks{1, 4};
  forward_logits(p, toks, sequential_positions(2), build_bidirectional_mask(1, 1));
  CHECK(forward_pass_count() == before + 1);
}

TEST_CASE("forward rejects inconsistent inputs") {
  const auto p = testing::tiny_model(4, 3);
  const std::vector<int> toks{1, 2, 3};
  CHECK_THROWS_AS(forward_logits(p, toks, sequential_positions(2), build_bidirectional_mask(1, 2)),
                  ConfigError);
  const std::vector<int> bad{1, 9};
  CHECK_THROWS_AS(forward_logits(p, bad, sequential_positions(2), build_bidirectional_mask(1, 1)),
                  ConfigError);
  ModelConfig c = p.config;
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("init gives zero biases and unit gains") {
  Rng r(9);
  const auto p = init_params(testing::tiny_config(5), r);
  for (double v : p.tensors[p.index_of("layer0.attn.bq")].values) CHECK(v == 0.0);
  for (double v : p.tensors[p.index_of("lnf.g")].values) CHECK(v == 1.0);
  CHECK(p.tensors[p.index_of("tok_emb")].shape == diffmath::Shape{6, 8});
  const auto s = p.snapshot(Role::stale);
  CHECK(s.role == Role::stale);
  CHECK(s.tensors[0].values == p.tensors[0].values);
}
