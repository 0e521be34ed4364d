#include <algorithm>
#include <cmath>
#include <numbers>

#include "d2/diffmath.hpp"
#include "d2/error.hpp"
#include "d2/kernels.hpp"

namespace d2::diffmath {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void require_matrix(const Tape& t, Var v, const char* op) {
  require(t.shape(v).size() == 2, std::string(op) + ": expected a rank-2 array, got " +
                                      shape_string(t.shape(v)));
}

void require_same(const Tape& t, Var a, Var b, const char* op) {
  require(t.shape(a) == t.shape(b), std::string(op) + ": shape mismatch " +
                                        shape_string(t.shape(a)) + " vs " +
                                        shape_string(t.shape(b)));
}

// Elementwise unary op with derivative expressed from (x, y).
template <class F, class D>
Var unary(Tape& t, Var x, F f, D dfdx) {
  const Array& xa = t.array(x);
  Array out(xa.shape, 0.0);
  for (std::size_t i = 0; i < xa.size(); ++i) out.values[i] = f(xa.values[i]);
  Var y{t.size()};
  return t.record(std::move(out), {x}, [x, y, dfdx](Tape& tp) {
    if (!tp.requires_grad(x)) return;
    auto xv = tp.values(x);
    auto yv = tp.values(y);
    auto gy = tp.grad(y);
    auto gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  require_matrix(t, a, "matmul");
  require_matrix(t, b, "matmul");
  const std::size_t m = t.shape(a)[0], k = t.shape(a)[1], n = t.shape(b)[1];
  require(t.shape(b)[0] == k, "matmul: inner dimension mismatch " + shape_string(t.shape(a)) +
                                  " x " + shape_string(t.shape(b)));
  Array out({m, n}, 0.0);
  kernels::matmul(t.values(a), t.values(b), out.values, m, k, n);
  t.add_matmul_flops(2ull * m * k * n);
  Var y{t.size()};
  return t.record(std::move(out), {a, b}, [a, b, y, m, k, n](Tape& tp) {
    auto gy = tp.grad(y);
    if (tp.requires_grad(a)) kernels::matmul_nt_acc(gy, tp.values(b), tp.grad(a), m, k, n);
    if (tp.requires_grad(b)) kernels::matmul_tn_acc(tp.values(a), gy, tp.grad(b), m, k, n);
  });
}

Var transpose(Tape& t, Var a) {
  require_matrix(t, a, "transpose");
  const std::size_t m = t.shape(a)[0], n = t.shape(a)[1];
  const Array& aa = t.array(a);
  Array out({n, m}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.values[j * m + i] = aa.values[i * n + j];
  Var y{t.size()};
  return t.record(std::move(out), {a}, [a, y, m, n](Tape& tp) {
    if (!tp.requires_grad(a)) return;
    auto gy = tp.grad(y);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += gy[j * m + i];
  });
}

Var add(Tape& t, Var a, Var b) {
  require_same(t, a, b, "add");
  Array out = t.array(a);
  out.grad.clear();
  auto bv = t.values(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += bv[i];
  Var y{t.size()};
  return t.record(std::move(out), {a, b}, [a, b, y](Tape& tp) {
    auto gy = tp.grad(y);
    for (Var in : {a, b}) {
      if (!tp.requires_grad(in)) continue;
      auto g = tp.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same(t, a, b, "sub");
  Array out = t.array(a);
  out.grad.clear();
  auto bv = t.values(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= bv[i];
  Var y{t.size()};
  return t.record(std::move(out), {a, b}, [a, b, y](Tape& tp) {
    auto gy = tp.grad(y);
    if (tp.requires_grad(a)) {
      auto g = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (tp.requires_grad(b)) {
      auto g = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same(t, a, b, "mul");
  Array out = t.array(a);
  out.grad.clear();
  auto bv = t.values(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= bv[i];
  Var y{t.size()};
  return t.record(std::move(out), {a, b}, [a, b, y](Tape& tp) {
    auto gy = tp.grad(y);
    if (tp.requires_grad(a)) {
      auto g = tp.grad(a);
      auto bv2 = tp.values(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bv2[i];
    }
    if (tp.requires_grad(b)) {
      auto g = tp.grad(b);
      auto av = tp.values(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
    }
  });
}

Var add_row_bias(Tape& t, Var x, Var bias) {
  require_matrix(t, x, "add_row_bias");
  const std::size_t m = t.shape(x)[0], n = t.shape(x)[1];
  require(t.shape(bias) == Shape{n}, "add_row_bias: bias shape " + shape_string(t.shape(bias)) +
                                         " does not match row width " + std::to_string(n));
  Array out = t.array(x);
  out.grad.clear();
  auto bv = t.values(bias);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] += bv[j];
  Var y{t.size()};
  return t.record(std::move(out), {x, bias}, [x, bias, y, m, n](Tape& tp) {
    auto gy = tp.grad(y);
    if (tp.requires_grad(x)) {
      auto g = tp.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (tp.requires_grad(bias)) {
      auto g = tp.grad(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j];
    }
  });
}

Var scale(Tape& t, Var x, double c) {
  return unary(t, x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Tape& t, Var x, double c) {
  return unary(t, x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var tanh(Tape& t, Var x) {
  return unary(
      t, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Tape& t, Var x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      t, x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Var exp(Tape& t, Var x) {
  return unary(
      t, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var softmax_rows(Tape& t, Var x) {
  const Array& xa = t.array(x);
  const std::size_t m = xa.rows(), n = xa.cols();
  Array out(xa.shape, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xa.values.data() + i * n;
    double* o = out.values.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  Var y{t.size()};
  return t.record(std::move(out), {x}, [x, y, m, n](Tape& tp) {
    if (!tp.requires_grad(x)) return;
    auto gy = tp.grad(y);
    auto yv = tp.values(y);
    auto gx = tp.grad(x);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[i * n + j] * yv[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += yv[i * n + j] * (gy[i * n + j] - dot);
    }
  });
}

Var log_softmax_rows(Tape& t, Var x) {
  const Array& xa = t.array(x);
  const std::size_t m = xa.rows(), n = xa.cols();
  Array out(xa.shape, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xa.values.data() + i * n;
    double* o = out.values.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) o[j] = row[j] - lz;
  }
  Var y{t.size()};
  return t.record(std::move(out), {x}, [x, y, m, n](Tape& tp) {
    if (!tp.requires_grad(x)) return;
    auto gy = tp.grad(y);
    auto yv = tp.values(y);
    auto gx = tp.grad(x);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gy[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += gy[i * n + j] - std::exp(yv[i * n + j]) * s;
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  require_matrix(t, x, "layer_norm");
  const std::size_t m = t.shape(x)[0], n = t.shape(x)[1];
  require(t.shape(gamma) == Shape{n} && t.shape(beta) == Shape{n},
          "layer_norm: gamma/beta must have shape [" + std::to_string(n) + "]");
  const Array& xa = t.array(x);
  auto gv = t.values(gamma);
  auto bv = t.values(beta);
  Array out(xa.shape, 0.0);
  // Normalized activations and inverse std are kept for the backward pass.
  std::vector<double> xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xa.values.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      out.values[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  Var y{t.size()};
  return t.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, y, m, n, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Tape& tp) {
                    auto gy = tp.grad(y);
                    if (tp.requires_grad(gamma)) {
                      auto gg = tp.grad(gamma);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) gg[j] += gy[i * n + j] * xhat[i * n + j];
                    }
                    if (tp.requires_grad(beta)) {
                      auto gb = tp.grad(beta);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
                    }
                    if (tp.requires_grad(x)) {
                      auto gv2 = tp.values(gamma);
                      auto gx = tp.grad(x);
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t i = 0; i < m; ++i) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double d = gy[i * n + j] * gv2[j];
                          mean_d += d;
                          mean_dx += d * xhat[i * n + j];
                        }
                        mean_d *= inv_n;
                        mean_dx *= inv_n;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double d = gy[i * n + j] * gv2[j];
                          gx[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                        }
                      }
                    }
                  });
}

Var embedding(Tape& t, Var table, std::span<const int> ids) {
  require_matrix(t, table, "embedding");
  const std::size_t rows = t.shape(table)[0], d = t.shape(table)[1];
  require(!ids.empty(), "embedding: empty id list");
  std::vector<int> idv(ids.begin(), ids.end());
  Array out({idv.size(), d}, 0.0);
  auto tv = t.values(table);
  for (std::size_t i = 0; i < idv.size(); ++i) {
    require(idv[i] >= 0 && static_cast<std::size_t>(idv[i]) < rows,
            "embedding: id " + std::to_string(idv[i]) + " outside table of " +
                std::to_string(rows) + " rows");
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(idv[i] * d), d, out.values.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Var y{t.size()};
  return t.record(std::move(out), {table}, [table, y, d, idv = std::move(idv)](Tape& tp) {
    if (!tp.requires_grad(table)) return;
    auto gy = tp.grad(y);
    auto gt = tp.grad(table);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idv[i]) * d + j] += gy[i * d + j];
  });
}

Var add_attention_bias(Tape& t, Var scores, std::span<const double> bias) {
  require_matrix(t, scores, "add_attention_bias");
  const std::size_t m = t.shape(scores)[0], n = t.shape(scores)[1];
  require(bias.size() == m * n, "add_attention_bias: bias has " + std::to_string(bias.size()) +
                                    " entries, scores " + shape_string(t.shape(scores)));
  Array out = t.array(scores);
  out.grad.clear();
  for (std::size_t i = 0; i < m; ++i) {
    bool any_open = false;
    for (std::size_t j = 0; j < n; ++j) {
      const double b = bias[i * n + j];
      if (b == 0.0) {
        any_open = true;
      } else if (std::isinf(b) && b < 0) {
        out.values[i * n + j] = kMaskedScore;
      } else {
        throw ConfigError("add_attention_bias: bias entries must be 0 or -inf");
      }
    }
    if (!any_open) throw ConfigError("empty attention row " + std::to_string(i));
  }
  std::vector<std::uint8_t> open(m * n);
  for (std::size_t i = 0; i < m * n; ++i) open[i] = bias[i] == 0.0;
  Var y{t.size()};
  return t.record(std::move(out), {scores}, [scores, y, open = std::move(open)](Tape& tp) {
    if (!tp.requires_grad(scores)) return;
    auto gy = tp.grad(y);
    auto gs = tp.grad(scores);
    for (std::size_t i = 0; i < gs.size(); ++i)
      if (open[i]) gs[i] += gy[i];
  });
}

Var gather(Tape& t, Var x, std::span<const std::size_t> rows, std::span<const int> cols) {
  require(rows.size() == cols.size() && !rows.empty(), "gather: rows/cols size mismatch or empty");
  const Array& xa = t.array(x);
  const std::size_t m = xa.rows(), n = xa.cols();
  std::vector<std::size_t> flat(rows.size());
  Array out({rows.size()}, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < m && cols[i] >= 0 && static_cast<std::size_t>(cols[i]) < n,
            "gather: index out of range");
    flat[i] = rows[i] * n + static_cast<std::size_t>(cols[i]);
    out.values[i] = xa.values[flat[i]];
  }
  Var y{t.size()};
  return t.record(std::move(out), {x}, [x, y, flat = std::move(flat)](Tape& tp) {
    if (!tp.requires_grad(x)) return;
    auto gy = tp.grad(y);
    auto gx = tp.grad(x);
    for (std::size_t i = 0; i < flat.size(); ++i) gx[flat[i]] += gy[i];
  });
}

Var sum(Tape& t, Var x) {
  double s = 0.0;
  for (double v : t.values(x)) s += v;
  Var y{t.size()};
  return t.record(Array({1}, {s}), {x}, [x, y](Tape& tp) {
    if (!tp.requires_grad(x)) return;
    const double g = tp.grad(y)[0];
    for (double& gx : tp.grad(x)) gx += g;
  });
}

Var mean(Tape& t, Var x) {
  const double inv = 1.0 / static_cast<double>(t.values(x).size());
  return scale(t, sum(t, x), inv);
}

Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t count) {
  require_matrix(t, x, "slice_cols");
  const std::size_t m = t.shape(x)[0], n = t.shape(x)[1];
  require(count > 0 && begin + count <= n, "slice_cols: range out of bounds");
  Array out({m, count}, 0.0);
  auto xv = t.values(x);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.values[i * count + j] = xv[i * n + begin + j];
  Var y{t.size()};
  return t.record(std::move(out), {x}, [x, y, m, n, begin, count](Tape& tp) {
    if (!tp.requires_grad(x)) return;
    auto gy = tp.grad(y);
    auto gx = tp.grad(x);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += gy[i * count + j];
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = t.shape(parts[0]).at(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    require_matrix(t, p, "concat_cols");
    require(t.shape(p)[0] == m, "concat_cols: row count mismatch");
    widths.push_back(t.shape(p)[1]);
    total += t.shape(p)[1];
  }
  Array out({m, total}, 0.0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = t.values(parts[k]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.values[i * total + off + j] = pv[i * widths[k] + j];
    off += widths[k];
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  Var y{t.size()};
  return t.record(std::move(out), parts, [ins, widths, y, m, total](Tape& tp) {
    auto gy = tp.grad(y);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (tp.requires_grad(ins[k])) {
        auto g = tp.grad(ins[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += gy[i * total + o + j];
      }
      o += widths[k];
    }
  });
}

Var concat(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat: no inputs");
  std::vector<double> vals;
  std::vector<std::size_t> sizes;
  for (Var p : parts) {
    require(t.shape(p).size() == 1, "concat: inputs must be rank-1, got " + shape_string(t.shape(p)));
    auto v = t.values(p);
    vals.insert(vals.end(), v.begin(), v.end());
    sizes.push_back(v.size());
  }
  const std::size_t total = vals.size();
  std::vector<Var> ins(parts.begin(), parts.end());
  Var y{t.size()};
  return t.record(Array({total}, std::move(vals)), parts, [ins, sizes, y](Tape& tp) {
    auto gy = tp.grad(y);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (tp.requires_grad(ins[k])) {
        auto g = tp.grad(ins[k]);
        for (std::size_t j = 0; j < sizes[k]; ++j) g[j] += gy[o + j];
      }
      o += sizes[k];
    }
  });
}

Var clamp(Tape& t, Var x, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  return unary(
      t, x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var minimum(Tape& t, Var a, Var b) {
  require_same(t, a, b, "minimum");
  const Array& aa = t.array(a);
  auto bv = t.values(b);
  Array out(aa.shape, 0.0);
  std::vector<std::uint8_t> take_a(aa.size());
  for (std::size_t i = 0; i < aa.size(); ++i) {
    take_a[i] = aa.values[i] <= bv[i];
    out.values[i] = take_a[i] ? aa.values[i] : bv[i];
  }
  Var y{t.size()};
  return t.record(std::move(out), {a, b}, [a, b, y, take_a = std::move(take_a)](Tape& tp) {
    auto gy = tp.grad(y);
    if (tp.requires_grad(a)) {
      auto g = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (take_a[i]) g[i] += gy[i];
    }
    if (tp.requires_grad(b)) {
      auto g = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!take_a[i]) g[i] += gy[i];
    }
  });
}

}  // namespace d2::diffmath
