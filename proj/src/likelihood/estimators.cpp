#include <algorithm>
#include <numeric>

#include "d2/error.hpp"
#include "d2/likelihood.hpp"

namespace d2::likelihood {

namespace dm = d2::diffmath;

Estimator Estimator::parse(const std::string& s) {
  if (s == "full") return full();
  if (s == "anyorder" || s == "oneshot") return oneshot();
  const std::string prefix = "stepmerge";
  if (s.rfind(prefix, 0) == 0) {
    std::string rest = s.substr(prefix.size());
    if (rest.size() > 1 && (rest[0] == ':' || rest[0] == '=')) {
      try {
        std::size_t used = 0;
        const int n = std::stoi(rest.substr(1), &used);
        if (used + 1 == rest.size() && n >= 1) return stepmerge(n);
      } catch (const std::exception&) {
      }
    }
  }
  throw ConfigError("estimator must be full, stepmerge:N or anyorder, got '" + s + "'");
}

std::string Estimator::name() const {
  switch (kind) {
    case EstimatorKind::full: return "full";
    case EstimatorKind::stepmerge: return "stepmerge:" + std::to_string(segments);
    case EstimatorKind::oneshot: return "anyorder";
  }
  return "?";
}

std::vector<Segment> make_segments(int steps, int n, bool uneven) {
  if (steps < 1 || n < 1 || n > steps)
    throw ConfigError("stepmerge needs 1 <= N <= T, got N = " + std::to_string(n) +
                      ", T = " + std::to_string(steps));
  if (steps % n != 0 && !uneven)
    throw ConfigError("stepmerge: N = " + std::to_string(n) + " does not divide T = " +
                      std::to_string(steps));
  std::vector<Segment> out;
  const int base = steps / n;
  const int extra = steps % n;
  int hi = steps;
  for (int i = 0; i < n; ++i) {
    const int width = base + (i < extra ? 1 : 0);
    out.push_back({hi - width, hi});
    hi -= width;
  }
  return out;
}

std::vector<double> LikelihoodBreakdown::logprobs() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.logprob);
  return out;
}

namespace {

struct PassResult {
  dm::Var part;
  std::vector<int> positions;
};

// One forward pass over `ctx` scoring the completion slots in `positions`
// (offset by `row_offset` in the input layout).
PassResult score_pass(dm::Tape& tape, const model::BoundModel& m, const Trajectory& traj,
                      std::span<const int> ctx, const model::PositionAssignment& pos,
                      const model::AttentionMaskMatrix& mask, std::size_t row_offset,
                      std::vector<int> positions) {
  const dm::Var logits = model::forward(tape, m, ctx, pos, mask);
  PassResult r;
  r.positions = std::move(positions);
  if (r.positions.empty()) return r;
  const dm::Var logp = dm::log_softmax_rows(tape, logits);
  std::vector<std::size_t> rows;
  std::vector<int> cols;
  for (int l : r.positions) {
    rows.push_back(row_offset + static_cast<std::size_t>(l));
    cols.push_back(traj.tokens[static_cast<std::size_t>(l)]);
  }
  r.part = dm::gather(tape, logp, rows, cols);
  return r;
}

ScoredTokens assemble(dm::Tape& tape, const Trajectory& traj, std::vector<PassResult>& passes,
                      std::vector<Attribution> tags, std::vector<int> indices) {
  std::vector<dm::Var> parts;
  std::vector<int> order;
  for (auto& p : passes) {
    if (p.positions.empty()) continue;
    parts.push_back(p.part);
    order.insert(order.end(), p.positions.begin(), p.positions.end());
  }
  if (static_cast<int>(order.size()) != traj.length())
    throw ConfigError("likelihood: trajectory positions not covered exactly once");
  ScoredTokens out;
  out.forward_passes = static_cast<int>(passes.size());
  out.tags = std::move(tags);
  out.indices = std::move(indices);
  dm::Var flat = parts.size() == 1 ? parts[0] : dm::concat(tape, parts);
  // slot[l] = index in `order` holding position l
  std::vector<int> slot(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) slot[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  bool identity = true;
  for (std::size_t l = 0; l < slot.size(); ++l) identity = identity && slot[l] == static_cast<int>(l);
  if (identity) {
    out.logprobs = flat;
  } else {
    std::vector<std::size_t> rows(slot.size(), 0);
    out.logprobs = dm::gather(tape, flat, rows, slot);
  }
  return out;
}

template <class MaskFn>
ScoredTokens score_per_step(dm::Tape& tape, const model::BoundModel& m, const Trajectory& traj,
                            MaskFn&& mask_for_step) {
  const auto& s = traj.schedule;
  const int mask_id = m.config->mask_id();
  const auto ts = s.decode_steps();
  const auto pos = model::sequential_positions(traj.prompt.size() + traj.tokens.size());
  std::vector<PassResult> passes;
  std::vector<Attribution> tags(static_cast<std::size_t>(traj.length()), Attribution::step);
  std::vector<int> indices(ts.begin(), ts.end());
  for (int t = s.steps - 1; t >= 0; --t) {
    const auto ctx = context_tokens(traj.prompt, traj.tokens, ts, t, mask_id);
    passes.push_back(score_pass(tape, m, traj, ctx, pos, mask_for_step(t), traj.prompt.size(),
                                s.unmask[static_cast<std::size_t>(t)]));
  }
  return assemble(tape, traj, passes, std::move(tags), std::move(indices));
}

void check_trajectory(const model::ModelConfig& c, const Trajectory& traj) {
  try {
    traj.validate(c.mask_id());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("likelihood: ") + e.what());
  }
}

}  // namespace

ScoredTokens score_tokens(dm::Tape& tape, const model::BoundModel& m, const Trajectory& traj,
                          const Estimator& est) {
  check_trajectory(*m.config, traj);
  const auto& s = traj.schedule;
  const int lp = traj.prompt_length();
  switch (est.kind) {
    case EstimatorKind::full:
      return score_per_step(tape, m, traj, [&](int t) {
        return decoding::step_mask(s, traj.generator, t, lp);
      });
    case EstimatorKind::stepmerge: {
      const auto segs = make_segments(s.steps, est.segments, est.uneven);
      const auto ts = s.decode_steps();
      const int mask_id = m.config->mask_id();
      const auto pos = model::sequential_positions(traj.prompt.size() + traj.tokens.size());
      std::vector<PassResult> passes;
      std::vector<Attribution> tags(static_cast<std::size_t>(traj.length()), Attribution::segment);
      std::vector<int> indices(static_cast<std::size_t>(traj.length()), 0);
      for (std::size_t n = 0; n < segs.size(); ++n) {
        const Segment seg = segs[n];
        std::vector<int> members;
        for (int l = 0; l < traj.length(); ++l) {
          const int tl = ts[static_cast<std::size_t>(l)];
          if (tl >= seg.lo && tl < seg.hi) {
            members.push_back(l);
            // segment index counted from t = 0 upward, matching [nB, (n+1)B)
            indices[static_cast<std::size_t>(l)] = static_cast<int>(segs.size() - 1 - n);
          }
        }
        const auto ctx = context_tokens(traj.prompt, traj.tokens, ts, seg.hi - 1, mask_id);
        passes.push_back(score_pass(tape, m, traj, ctx, pos,
                                    decoding::step_mask(s, traj.generator, seg.hi - 1, lp),
                                    traj.prompt.size(), std::move(members)));
      }
      return assemble(tape, traj, passes, std::move(tags), std::move(indices));
    }
    case EstimatorKind::oneshot: {
      const auto in = model::build_oneshot_mask(traj, m.config->mask_id());
      std::vector<int> all(static_cast<std::size_t>(traj.length()));
      std::iota(all.begin(), all.end(), 0);
      std::vector<PassResult> passes;
      passes.push_back(score_pass(tape, m, traj, in.tokens, in.positions, in.mask,
                                  traj.prompt.size() + traj.tokens.size(), std::move(all)));
      return assemble(tape, traj, passes,
                      std::vector<Attribution>(static_cast<std::size_t>(traj.length()), Attribution::oneshot),
                      std::vector<int>(static_cast<std::size_t>(traj.length()), 0));
    }
  }
  throw ConfigError("unknown estimator");
}

namespace {

LikelihoodBreakdown to_breakdown(const dm::Tape& tape, const Trajectory& traj,
                                 const ScoredTokens& st) {
  LikelihoodBreakdown b;
  b.forward_passes = st.forward_passes;
  if (traj.length() == 0) return b;
  const auto v = tape.values(st.logprobs);
  for (int l = 0; l < traj.length(); ++l) {
    const auto i = static_cast<std::size_t>(l);
    b.entries.push_back({l, traj.tokens[i], v[i], st.tags[i], st.indices[i]});
    b.total += v[i];
  }
  return b;
}

}  // namespace

LikelihoodBreakdown traj_loglik(const model::ModelParams& params, const Trajectory& traj,
                                const Estimator& est) {
  dm::Tape tape(dm::Tape::Mode::no_grad);
  const auto m = model::bind(tape, params);
  const auto st = score_tokens(tape, m, traj, est);
  return to_breakdown(tape, traj, st);
}

LikelihoodBreakdown traj_loglik_with_masks(const model::ModelParams& params,
                                           const Trajectory& traj,
                                           std::span<const model::AttentionMaskMatrix> masks) {
  check_trajectory(params.config, traj);
  if (static_cast<int>(masks.size()) != traj.steps())
    throw ConfigError("likelihood: " + std::to_string(masks.size()) + " masks for " +
                      std::to_string(traj.steps()) + " steps");
  dm::Tape tape(dm::Tape::Mode::no_grad);
  const auto m = model::bind(tape, params);
  const auto st = score_per_step(tape, m, traj, [&](int t) -> const model::AttentionMaskMatrix& {
    return masks[static_cast<std::size_t>(t)];
  });
  return to_breakdown(tape, traj, st);
}

}  // namespace d2::likelihood
