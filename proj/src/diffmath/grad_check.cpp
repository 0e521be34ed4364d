#include <algorithm>
#include <cmath>

#include "d2/diffmath.hpp"
#include "d2/error.hpp"

namespace d2::diffmath {
namespace {

double evaluate(const LossFn& fn, const std::vector<Array>& params) {
  Tape t(Tape::Mode::no_grad);
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(t.leaf(p));
  const double v = t.scalar(fn(t, leaves));
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

std::vector<std::vector<double>> analytic_gradients(const LossFn& fn,
                                                    const std::vector<Array>& params) {
  Tape t;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(t.leaf(p));
  Var loss = fn(t, leaves);
  t.backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (Var v : leaves) grads.push_back(t.grad_copy(v));
  return grads;
}

GradCheckResult grad_check(const LossFn& fn, std::vector<Array>& params, double h) {
  if (!(h > 0.0 && h <= 1e-3)) throw ConfigError("grad_check: step h must lie in (0, 1e-3]");
  const auto grads = analytic_gradients(fn, params);
  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& vals = params[p].values;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = evaluate(fn, params);
      vals[i] = saved - h;
      const double down = evaluate(fn, params);
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[p][i];
      const double err =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
      if (err > res.max_rel_error) res = {err, p, i, analytic, numeric};
    }
  }
  return res;
}

}  // namespace d2::diffmath
