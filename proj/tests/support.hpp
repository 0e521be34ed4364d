#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "d2/model.hpp"
#include "d2/rng.hpp"

namespace d2::testing {

inline model::ModelConfig tiny_config(int vocab, int d_model = 8, int heads = 2) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d_model;
  c.n_layers = 2;
  c.n_heads = heads;
  c.max_positions = 24;
  c.d_ff = 2 * d_model;
  return c;
}

inline model::ModelParams tiny_model(int vocab, std::uint64_t seed, double stddev = 0.5,
                                     int d_model = 8, int heads = 2) {
  Rng r = Rng::stream({seed, 0x7465});
  return model::random_params(tiny_config(vocab, d_model, heads), r, stddev);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& ref,
                            double floor = 1e-10) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - ref[i]) / std::max(std::abs(ref[i]), floor));
  return m;
}

}  // namespace d2::testing
