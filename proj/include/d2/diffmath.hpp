#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

// Minimal reverse-mode differentiable array engine in double precision.
//
// A Tape records operations as they run. Leaves copy their values in, so any
// number of tapes may read the same parameter arrays concurrently; gradients
// live on the tape and are read back with Tape::grad after backward().
namespace d2::diffmath {

using Shape = std::vector<std::size_t>;

// -inf attention bias is stored as this finite sentinel so that softmax never
// evaluates (-inf) - (-inf).
inline constexpr double kMaskedScore = -1e30;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Array {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until allocated

  Array() = default;
  explicit Array(Shape s, double fill = 0.0);
  Array(Shape s, std::vector<double> v);

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  // Rank-2 extents; a rank-1 array is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t i, std::size_t j) { return values[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * cols() + j]; }

  void ensure_grad();
  void zero_grad();
};

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

class Tape {
 public:
  enum class Mode { record, no_grad };
  using Backward = std::function<void(Tape&)>;

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Differentiable input (a parameter). Values are copied.
  Var leaf(const Array& a);
  // Gradient-free input.
  Var constant(Array a);

  // Records an op output. `fn` is dropped when no input requires a gradient.
  Var record(Array out, std::initializer_list<Var> inputs, Backward fn);
  Var record(Array out, std::span<const Var> inputs, Backward fn);

  const Shape& shape(Var v) const { return node(v).data.shape; }
  std::span<const double> values(Var v) const { return node(v).data.values; }
  const Array& array(Var v) const { return node(v).data; }
  double scalar(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Gradient accumulator of v, allocated (zeros) on first access.
  std::span<double> grad(Var v);
  // Gradient after backward(); zeros when v never received one.
  std::vector<double> grad_copy(Var v) const;

  // Reverse pass from a scalar loss. May be called once per tape.
  void backward(Var loss);

  Mode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // 2*m*k*n summed over every matmul recorded on this tape.
  std::uint64_t matmul_flops() const noexcept { return matmul_flops_; }
  void add_matmul_flops(std::uint64_t f) noexcept { matmul_flops_ += f; }

 private:
  struct Node {
    Array data;
    bool requires_grad = false;
    Backward backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  Mode mode_;
  std::deque<Node> nodes_;
  bool backward_done_ = false;
  std::uint64_t matmul_flops_ = 0;
};

// ---- closed op set -------------------------------------------------------

Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var add_row_bias(Tape& t, Var x, Var bias);
Var scale(Tape& t, Var x, double c);
Var add_scalar(Tape& t, Var x, double c);
Var tanh(Tape& t, Var x);
Var gelu(Tape& t, Var x);
Var exp(Tape& t, Var x);
Var softmax_rows(Tape& t, Var x);
Var log_softmax_rows(Tape& t, Var x);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
Var embedding(Tape& t, Var table, std::span<const int> ids);
// scores + bias, bias in {0, -inf} (row-major, same shape as scores).
// Throws when a row has no finite entry.
Var add_attention_bias(Tape& t, Var scores, std::span<const double> bias);
// out[i] = x[rows[i], cols[i]]
Var gather(Tape& t, Var x, std::span<const std::size_t> rows, std::span<const int> cols);
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);
Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t count);
Var concat_cols(Tape& t, std::span<const Var> parts);
// Concatenation of rank-1 arrays.
Var concat(Tape& t, std::span<const Var> parts);
// Clamped copy; the gradient passes only where lo < x < hi.
Var clamp(Tape& t, Var x, double lo, double hi);
// Elementwise minimum; ties send the gradient to `a`.
Var minimum(Tape& t, Var a, Var b);

// ---- gradient checking ---------------------------------------------------

// Builds a scalar loss on `t` from leaves bound to `params` (same order).
using LossFn = std::function<Var(Tape& t, std::span<const Var> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Max over all parameter entries of |analytic - central difference| /
// max(|analytic|, |numeric|, kGradFloor), with step h in (0, 1e-3]. The floor
// keeps structurally zero gradients (e.g. key biases under softmax) from
// turning rounding noise into a large ratio. `params` is restored.
inline constexpr double kGradFloor = 1e-4;
GradCheckResult grad_check(const LossFn& fn, std::vector<Array>& params, double h);

// Analytic gradients of fn at params, one vector per parameter.
std::vector<std::vector<double>> analytic_gradients(const LossFn& fn,
                                                    const std::vector<Array>& params);

}  // namespace d2::diffmath
