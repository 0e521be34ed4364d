#include <algorithm>
#include <cmath>
#include <sstream>

#include "d2/diffmath.hpp"
#include "d2/error.hpp"

namespace d2::diffmath {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Array::Array(Shape s, double fill) : shape(std::move(s)), values(element_count(shape), fill) {
  for (std::size_t e : shape)
    if (e == 0) throw ConfigError("array extents must be positive, got " + shape_string(shape));
}

Array::Array(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  for (std::size_t e : shape)
    if (e == 0) throw ConfigError("array extents must be positive, got " + shape_string(shape));
  if (values.size() != element_count(shape))
    throw ConfigError("array of shape " + shape_string(shape) + " given " +
                      std::to_string(values.size()) + " values");
}

std::size_t Array::rows() const {
  if (shape.size() == 1) return 1;
  if (shape.size() == 2) return shape[0];
  throw ConfigError("rows() needs rank 1 or 2, got " + shape_string(shape));
}

std::size_t Array::cols() const {
  if (shape.size() == 1) return shape[0];
  if (shape.size() == 2) return shape[1];
  throw ConfigError("cols() needs rank 1 or 2, got " + shape_string(shape));
}

void Array::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Array::zero_grad() { grad.assign(values.size(), 0.0); }

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ConfigError("variable does not belong to this tape");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw ConfigError("variable does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::leaf(const Array& a) {
  Node n;
  n.data.shape = a.shape;
  n.data.values = a.values;
  n.requires_grad = mode_ == Mode::record;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Array a) {
  Node n;
  a.grad.clear();
  n.data = std::move(a);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Array out, std::initializer_list<Var> inputs, Backward fn) {
  return record(std::move(out), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Array out, std::span<const Var> inputs, Backward fn) {
  for (double x : out.values) {
    if (!std::isfinite(x)) throw NumericError("non-finite value produced by forward op");
  }
  Node n;
  n.data = std::move(out);
  if (mode_ == Mode::record) {
    for (Var in : inputs) {
      if (node(in).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

double Tape::scalar(Var v) const {
  const auto& d = node(v).data;
  if (d.values.size() != 1) throw ConfigError("scalar() on array of shape " + shape_string(d.shape));
  return d.values[0];
}

std::span<double> Tape::grad(Var v) {
  auto& d = node(v).data;
  d.ensure_grad();
  return d.grad;
}

std::vector<double> Tape::grad_copy(Var v) const {
  const auto& d = node(v).data;
  if (d.grad.empty()) return std::vector<double>(d.values.size(), 0.0);
  return d.grad;
}

void Tape::backward(Var loss) {
  if (mode_ != Mode::record) throw ConfigError("backward() on a no_grad tape");
  if (backward_done_) throw ConfigError("backward() already ran on this tape");
  auto& l = node(loss);
  if (l.data.values.size() != 1)
    throw ConfigError("backward() needs a scalar loss, got shape " + shape_string(l.data.shape));
  backward_done_ = true;
  if (!l.requires_grad) return;
  l.data.zero_grad();
  l.data.grad[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.data.grad.empty()) continue;
    n.backward(*this);
  }
  for (const Node& n : nodes_) {
    for (double g : n.data.grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient produced by backward pass");
    }
  }
}

}  // namespace d2::diffmath
