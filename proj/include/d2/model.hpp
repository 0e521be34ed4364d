#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "d2/diffmath.hpp"
#include "d2/rng.hpp"
#include "d2/trajectory.hpp"

namespace d2::model {

// `vocab_size` counts the token values the model can emit. The mask token is
// the extra input id `vocab_size`; it never appears in the output head.
struct ModelConfig {
  int vocab_size = 12;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int max_positions = 32;
  int d_ff = 0;  // 0 means 4 * d_model

  int mask_id() const { return vocab_size; }
  int input_vocab() const { return vocab_size + 1; }
  int ff_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Role { policy, stale, reference };

struct ModelParams {
  ModelConfig config;
  Role role = Role::policy;
  std::vector<std::string> names;
  std::vector<diffmath::Array> tensors;

  std::size_t parameter_count() const;
  // Deep copy carrying a new role tag.
  ModelParams snapshot(Role r) const;
  std::size_t index_of(const std::string& name) const;
};

// Gaussian(0, stddev) weights and embeddings, zero biases, unit layer-norm gain.
ModelParams init_params(const ModelConfig& config, Rng& rng, double stddev = 0.02);
// Every entry (biases and layer-norm parameters included) perturbed by
// Gaussian(0, stddev); used to draw generic parameter points in tests.
ModelParams random_params(const ModelConfig& config, Rng& rng, double stddev);

// Boolean query x key matrix; true means the query row attends to the key.
class AttentionMaskMatrix {
 public:
  AttentionMaskMatrix() = default;
  explicit AttentionMaskMatrix(std::size_t n) : n_(n), bits_(n * n, 0) {}

  std::size_t size() const noexcept { return n_; }
  bool allows(std::size_t q, std::size_t k) const { return bits_.at(q * n_ + k) != 0; }
  void set(std::size_t q, std::size_t k, bool on = true) { bits_.at(q * n_ + k) = on ? 1 : 0; }
  void set_row(std::size_t q, std::span<const std::size_t> keys);
  // Keys of row q in increasing order.
  std::vector<std::size_t> row(std::size_t q) const;
  // Row-major attention bias: 0 where allowed, -inf elsewhere.
  std::vector<double> bias() const;
  std::string to_string() const;
  bool operator==(const AttentionMaskMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct PositionAssignment {
  std::vector<int> pos;
};

PositionAssignment sequential_positions(std::size_t n);

// Any-order decoding mask for step t over the prompt+completion layout.
// Prompt rows see the prompt; a decoded x^l sees prompt + Omega_l + U_{t_l};
// a still-masked m^l sees prompt + everything decoded so far + itself.
// Only U_{t'} for t' > t need to be assigned in `schedule`.
AttentionMaskMatrix build_decoding_mask(const DecodeSchedule& schedule, int step, int prompt_len);

// Completion rows see every slot; prompt rows see the prompt.
AttentionMaskMatrix build_bidirectional_mask(int prompt_len, int length);

// Prompt + x_0 + L mask tokens with the one-shot attention pattern and
// positions pos(i) = i for i < L_P + L, i - L afterwards.
struct OneShotInput {
  std::vector<int> tokens;
  AttentionMaskMatrix mask;
  PositionAssignment positions;
};
OneShotInput build_oneshot_mask(const Trajectory& traj, int mask_token);

// Parameters bound as leaves of one tape.
struct BoundModel {
  const ModelConfig* config = nullptr;
  std::vector<diffmath::Var> vars;
};

BoundModel bind(diffmath::Tape& tape, const ModelParams& params);

// Logits [S, vocab_size] for every slot.
diffmath::Var forward(diffmath::Tape& tape, const BoundModel& model, std::span<const int> tokens,
                      const PositionAssignment& positions, const AttentionMaskMatrix& mask);

// Gradient-free convenience wrapper returning logits.
diffmath::Array forward_logits(const ModelParams& params, std::span<const int> tokens,
                               const PositionAssignment& positions,
                               const AttentionMaskMatrix& mask);

// Number of forward() calls made by this process (all threads).
std::uint64_t forward_pass_count();

// Matmul FLOPs (2*m*k*n) of one forward pass over `seq_len` slots.
std::uint64_t forward_flops(const ModelConfig& config, std::size_t seq_len);

}  // namespace d2::model
