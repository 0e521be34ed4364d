#include <algorithm>

#include "d2/decoding.hpp"
#include "d2/error.hpp"

namespace d2::decoding {
namespace {

using PositionSet = std::vector<int>;

PositionSet completion_keys(const model::AttentionMaskMatrix& m, int prompt_len, int L, int l) {
  const auto q = static_cast<std::size_t>(prompt_len + l);
  PositionSet out;
  for (int j = 0; j < L; ++j)
    if (m.allows(q, static_cast<std::size_t>(prompt_len + j))) out.push_back(j);
  return out;
}

PositionSet outside(const PositionSet& a, const std::vector<char>& allowed) {
  PositionSet out;
  for (int j : a)
    if (!allowed[static_cast<std::size_t>(j)]) out.push_back(j);
  return out;
}

}  // namespace

CausalityReport check_any_order_causal(std::span<const model::AttentionMaskMatrix> masks,
                                       const DecodeSchedule& schedule, int prompt_len) {
  schedule.validate();
  const int T = schedule.steps;
  const int L = schedule.length;
  if (static_cast<int>(masks.size()) != T)
    throw ConfigError("causality check: " + std::to_string(masks.size()) + " masks for " +
                      std::to_string(T) + " steps");
  for (const auto& m : masks) {
    if (m.size() != static_cast<std::size_t>(prompt_len + L))
      throw ConfigError("causality check: mask side " + std::to_string(m.size()) +
                        " does not match L_P + L = " + std::to_string(prompt_len + L));
  }
  const auto ts = schedule.decode_steps();

  CausalityReport r;
  for (int l = 0; l < L; ++l) {
    const int tl = ts[static_cast<std::size_t>(l)];
    std::vector<char> omega(static_cast<std::size_t>(L), 0);
    std::vector<char> same_step(static_cast<std::size_t>(L), 0);
    for (int j = 0; j < L; ++j) {
      omega[static_cast<std::size_t>(j)] = ts[static_cast<std::size_t>(j)] > tl;
      same_step[static_cast<std::size_t>(j)] = ts[static_cast<std::size_t>(j)] >= tl;
    }

    std::vector<PositionSet> attn(static_cast<std::size_t>(tl + 1));
    for (int t = 0; t <= tl; ++t)
      attn[static_cast<std::size_t>(t)] = completion_keys(masks[static_cast<std::size_t>(t)], prompt_len, L, l);

    for (int t = 0; t <= tl && r.reasonable; ++t) {
      const auto& a = attn[static_cast<std::size_t>(t)];
      for (int j = 0; j < L; ++j) {
        if (omega[static_cast<std::size_t>(j)] && !std::binary_search(a.begin(), a.end(), j)) {
          r.reasonable = false;
          break;
        }
      }
    }

    // Condition 1: after decoding, the attention set never changes.
    for (int t = 1; t < tl; ++t) {
      if (attn[static_cast<std::size_t>(t)] != attn[0]) {
        r.consistent_attention = false;
        PositionSet diff;
        std::set_symmetric_difference(attn[0].begin(), attn[0].end(),
                                      attn[static_cast<std::size_t>(t)].begin(),
                                      attn[static_cast<std::size_t>(t)].end(), std::back_inserter(diff));
        r.witnesses.push_back({1, l, t, 0, diff});
        break;
      }
    }

    // Condition 2: when decoded, only earlier tokens and itself.
    {
      auto allowed = omega;
      allowed[static_cast<std::size_t>(l)] = 1;
      auto bad = outside(attn[static_cast<std::size_t>(tl)], allowed);
      if (!bad.empty()) {
        r.no_future_when_decoded = false;
        r.witnesses.push_back({2, l, tl, -1, bad});
      }
    }

    // Condition 3: exempt for tokens decoded in the last two steps.
    if (tl >= 2) {
      for (int t = 0; t < tl; ++t) {
        auto bad = outside(attn[static_cast<std::size_t>(t)], same_step);
        if (!bad.empty()) {
          r.no_future_after_decoded = false;
          r.witnesses.push_back({3, l, t, -1, bad});
          break;
        }
      }
    }
  }
  return r;
}

}  // namespace d2::decoding
