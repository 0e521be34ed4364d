#include <algorithm>

#include "d2/error.hpp"
#include "d2/model.hpp"

namespace d2::model {
namespace {

struct TensorSpec {
  std::string name;
  diffmath::Shape shape;
  enum Kind { weight, bias, gain } kind;
};

std::vector<TensorSpec> layout(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.ff_width());
  std::vector<TensorSpec> specs;
  specs.push_back({"tok_emb", {static_cast<std::size_t>(c.input_vocab()), d}, TensorSpec::weight});
  specs.push_back({"pos_emb", {static_cast<std::size_t>(c.max_positions), d}, TensorSpec::weight});
  for (int i = 0; i < c.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    specs.push_back({p + "ln1.g", {d}, TensorSpec::gain});
    specs.push_back({p + "ln1.b", {d}, TensorSpec::bias});
    for (const char* w : {"q", "k", "v", "o"}) {
      specs.push_back({p + "attn.w" + w, {d, d}, TensorSpec::weight});
      specs.push_back({p + "attn.b" + w, {d}, TensorSpec::bias});
    }
    specs.push_back({p + "ln2.g", {d}, TensorSpec::gain});
    specs.push_back({p + "ln2.b", {d}, TensorSpec::bias});
    specs.push_back({p + "mlp.w1", {d, ff}, TensorSpec::weight});
    specs.push_back({p + "mlp.b1", {ff}, TensorSpec::bias});
    specs.push_back({p + "mlp.w2", {ff, d}, TensorSpec::weight});
    specs.push_back({p + "mlp.b2", {d}, TensorSpec::bias});
  }
  specs.push_back({"lnf.g", {d}, TensorSpec::gain});
  specs.push_back({"lnf.b", {d}, TensorSpec::bias});
  specs.push_back({"head.w", {d, static_cast<std::size_t>(c.vocab_size)}, TensorSpec::weight});
  specs.push_back({"head.b", {static_cast<std::size_t>(c.vocab_size)}, TensorSpec::bias});
  return specs;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("model.vocab_size must be >= 1");
  if (n_layers < 2) throw ConfigError("model.n_layers must be >= 2");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw ConfigError("model.d_model must be a positive multiple of model.n_heads");
  if (max_positions < 1) throw ConfigError("model.max_positions must be >= 1");
  if (d_ff < 0) throw ConfigError("model.d_ff must be >= 0");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

ModelParams ModelParams::snapshot(Role r) const {
  ModelParams copy = *this;
  copy.role = r;
  for (auto& t : copy.tensors) t.grad.clear();
  return copy;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("no parameter named '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

ModelParams init_params(const ModelConfig& config, Rng& rng, double stddev) {
  config.validate();
  ModelParams p;
  p.config = config;
  for (auto& spec : layout(config)) {
    diffmath::Array a(spec.shape, spec.kind == TensorSpec::gain ? 1.0 : 0.0);
    if (spec.kind == TensorSpec::weight)
      for (double& v : a.values) v = rng.normal(0.0, stddev);
    p.names.push_back(spec.name);
    p.tensors.push_back(std::move(a));
  }
  return p;
}

ModelParams random_params(const ModelConfig& config, Rng& rng, double stddev) {
  config.validate();
  ModelParams p;
  p.config = config;
  for (auto& spec : layout(config)) {
    diffmath::Array a(spec.shape, spec.kind == TensorSpec::gain ? 1.0 : 0.0);
    for (double& v : a.values) v += rng.normal(0.0, stddev);
    p.names.push_back(spec.name);
    p.tensors.push_back(std::move(a));
  }
  return p;
}

}  // namespace d2::model
