#include <atomic>
#include <cmath>

#include "d2/error.hpp"
#include "d2/model.hpp"

namespace d2::model {
namespace {

namespace dm = d2::diffmath;

std::atomic<std::uint64_t> g_forward_calls{0};

constexpr std::size_t kTensorsPerLayer = 16;

// Offsets into BoundModel::vars, matching the order of init_params.
struct LayerVars {
  dm::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

LayerVars layer_vars(const BoundModel& m, int layer) {
  const std::size_t o = 2 + static_cast<std::size_t>(layer) * kTensorsPerLayer;
  const auto& v = m.vars;
  return {v[o],      v[o + 1],  v[o + 2],  v[o + 3],  v[o + 4],  v[o + 5],
          v[o + 6],  v[o + 7],  v[o + 8],  v[o + 9],  v[o + 10], v[o + 11],
          v[o + 12], v[o + 13], v[o + 14], v[o + 15]};
}

dm::Var linear(dm::Tape& t, dm::Var x, dm::Var w, dm::Var b) {
  return dm::add_row_bias(t, dm::matmul(t, x, w), b);
}

}  // namespace

BoundModel bind(dm::Tape& tape, const ModelParams& params) {
  BoundModel m;
  m.config = &params.config;
  m.vars.reserve(params.tensors.size());
  for (const auto& a : params.tensors) m.vars.push_back(tape.leaf(a));
  return m;
}

dm::Var forward(dm::Tape& t, const BoundModel& model, std::span<const int> tokens,
                const PositionAssignment& positions, const AttentionMaskMatrix& mask) {
  const ModelConfig& c = *model.config;
  const std::size_t S = tokens.size();
  if (S == 0) throw ConfigError("forward: empty input");
  if (positions.pos.size() != S || mask.size() != S)
    throw ConfigError("forward: tokens (" + std::to_string(S) + "), positions (" +
                      std::to_string(positions.pos.size()) + ") and mask (" +
                      std::to_string(mask.size()) + ") disagree in length");
  for (int p : positions.pos) {
    if (p < 0 || p >= c.max_positions)
      throw ConfigError("forward: position " + std::to_string(p) + " >= max_positions " +
                        std::to_string(c.max_positions));
  }
  for (int tok : tokens) {
    if (tok < 0 || tok >= c.input_vocab())
      throw ConfigError("forward: token id " + std::to_string(tok) + " outside input vocabulary");
  }
  g_forward_calls.fetch_add(1, std::memory_order_relaxed);

  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t hd = d / static_cast<std::size_t>(c.n_heads);
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::vector<double> bias = mask.bias();

  dm::Var x = dm::add(t, dm::embedding(t, model.vars[0], tokens),
                      dm::embedding(t, model.vars[1], positions.pos));
  for (int layer = 0; layer < c.n_layers; ++layer) {
    const LayerVars p = layer_vars(model, layer);
    dm::Var h = dm::layer_norm(t, x, p.ln1_g, p.ln1_b);
    dm::Var q = linear(t, h, p.wq, p.bq);
    dm::Var k = linear(t, h, p.wk, p.bk);
    dm::Var v = linear(t, h, p.wv, p.bv);
    std::vector<dm::Var> heads;
    heads.reserve(static_cast<std::size_t>(c.n_heads));
    for (int hi = 0; hi < c.n_heads; ++hi) {
      const std::size_t off = static_cast<std::size_t>(hi) * hd;
      dm::Var qh = c.n_heads == 1 ? q : dm::slice_cols(t, q, off, hd);
      dm::Var kh = c.n_heads == 1 ? k : dm::slice_cols(t, k, off, hd);
      dm::Var vh = c.n_heads == 1 ? v : dm::slice_cols(t, v, off, hd);
      dm::Var scores = dm::scale(t, dm::matmul(t, qh, dm::transpose(t, kh)), inv_sqrt_hd);
      dm::Var attn = dm::softmax_rows(t, dm::add_attention_bias(t, scores, bias));
      heads.push_back(dm::matmul(t, attn, vh));
    }
    dm::Var o = c.n_heads == 1 ? heads[0] : dm::concat_cols(t, heads);
    x = dm::add(t, x, linear(t, o, p.wo, p.bo));
    dm::Var h2 = dm::layer_norm(t, x, p.ln2_g, p.ln2_b);
    dm::Var f = linear(t, dm::gelu(t, linear(t, h2, p.w1, p.b1)), p.w2, p.b2);
    x = dm::add(t, x, f);
  }
  const std::size_t tail = 2 + static_cast<std::size_t>(c.n_layers) * kTensorsPerLayer;
  x = dm::layer_norm(t, x, model.vars[tail], model.vars[tail + 1]);
  return linear(t, x, model.vars[tail + 2], model.vars[tail + 3]);
}

dm::Array forward_logits(const ModelParams& params, std::span<const int> tokens,
                         const PositionAssignment& positions, const AttentionMaskMatrix& mask) {
  dm::Tape t(dm::Tape::Mode::no_grad);
  BoundModel m = bind(t, params);
  dm::Var logits = forward(t, m, tokens, positions, mask);
  return t.array(logits);
}

std::uint64_t forward_pass_count() { return g_forward_calls.load(std::memory_order_relaxed); }

std::uint64_t forward_flops(const ModelConfig& c, std::size_t seq_len) {
  const std::uint64_t S = seq_len;
  const auto d = static_cast<std::uint64_t>(c.d_model);
  const auto ff = static_cast<std::uint64_t>(c.ff_width());
  const auto V = static_cast<std::uint64_t>(c.vocab_size);
  const std::uint64_t projections = 4 * 2 * S * d * d;
  const std::uint64_t attention = 2 * (2 * S * S * d);  // QK^T and AV summed over heads
  const std::uint64_t mlp = 2 * (2 * S * d * ff);
  const std::uint64_t per_layer = projections + attention + mlp;
  return static_cast<std::uint64_t>(c.n_layers) * per_layer + 2 * S * d * V;
}

}  // namespace d2::model
