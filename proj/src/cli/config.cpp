#include "d2/cli/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "d2/error.hpp"
#include "d2/tasks.hpp"

namespace d2::cli {
namespace {

// Reads typed keys from one mapping and rejects keys it does not know.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(path_ + " must be a mapping");
  }

  template <class T>
  void get(const std::string& key, T& dst) {
    known_.insert(key);
    if (!node_ || node_.IsNull() || !node_[key]) return;
    try {
      dst = node_[key].as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(name(key) + " has the wrong type");
    }
  }

  Section child(const std::string& key) {
    known_.insert(key);
    if (!node_ || node_.IsNull()) return Section(YAML::Node(), name(key));
    return Section(node_[key], name(key));
  }

  void finish() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!known_.count(key)) throw ConfigError("unknown config key '" + name(key) + "'");
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> known_;
};

}  // namespace

void RunConfig::resolve() {
  const auto t = tasks::make_task(task);
  model.vocab_size = t->vocab_size();
  schedule.length = t->completion_length();
  model.validate();
  if (model.max_positions < t->prompt_length() + 2 * t->completion_length())
    throw ConfigError("model.max_positions must be >= prompt + 2 * completion length (" +
                      std::to_string(t->prompt_length() + 2 * t->completion_length()) + ")");
  if (!(init_std > 0.0)) throw ConfigError("model.init_std must be > 0");
  Rng probe(0);
  try {
    decoding::make_schedule(schedule.length, schedule.steps, schedule.tokens_per_step,
                            SelectionPolicy::top_confidence, probe);
  } catch (const ConfigError& e) {
    throw ConfigError("schedule.steps = " + std::to_string(schedule.steps) + ", schedule.tokens_per_step = " +
                      std::to_string(schedule.tokens_per_step) + " with task length " +
                      std::to_string(schedule.length) + ": " + e.what());
  }
  if (trainer.estimator.kind == likelihood::EstimatorKind::stepmerge)
    likelihood::make_segments(schedule.steps, trainer.estimator.segments, trainer.estimator.uneven);
  trainer.seed = seed;
  pretrain.seed = seed;
  trainer.validate();
}

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.get("task", c.task);
  top.get("seed", c.seed);
  top.get("out", c.out);
  std::string generator = to_string(c.generator);
  top.get("generator", generator);
  c.generator = parse_generator(generator);

  Section m = top.child("model");
  m.get("d_model", c.model.d_model);
  m.get("n_layers", c.model.n_layers);
  m.get("n_heads", c.model.n_heads);
  m.get("max_positions", c.model.max_positions);
  m.get("d_ff", c.model.d_ff);
  m.get("init_std", c.init_std);
  m.finish();

  Section s = top.child("schedule");
  s.get("steps", c.schedule.steps);
  s.get("tokens_per_step", c.schedule.tokens_per_step);
  std::string policy = to_string(c.schedule.policy);
  s.get("policy", policy);
  c.schedule.policy = parse_selection_policy(policy);
  s.finish();

  auto& tr = c.trainer;
  Section t = top.child("trainer");
  t.get("group_size", tr.group_size);
  t.get("batch_prompts", tr.batch_prompts);
  t.get("inner_updates", tr.inner_updates);
  t.get("clip_eps", tr.clip_eps);
  t.get("clip", tr.clip);
  t.get("kl_beta", tr.kl_beta);
  std::string adv = rltrain::to_string(tr.advantage_norm);
  t.get("advantage_norm", adv);
  tr.advantage_norm = rltrain::parse_advantage_norm(adv);
  std::string est = tr.estimator.name();
  t.get("estimator", est);
  tr.estimator = likelihood::Estimator::parse(est);
  std::string opt = rltrain::to_string(tr.optimizer);
  t.get("optimizer", opt);
  tr.optimizer = rltrain::parse_optimizer(opt);
  t.get("learning_rate", tr.learning_rate);
  t.get("adam_beta1", tr.adam_beta1);
  t.get("adam_beta2", tr.adam_beta2);
  t.get("adam_eps", tr.adam_eps);
  t.get("max_grad_norm", tr.max_grad_norm);
  t.get("temperature", tr.temperature);
  t.get("flop_budget", tr.flop_budget);
  t.get("eval_interval_flops", tr.eval_interval_flops);
  t.get("max_steps", tr.max_steps);
  t.get("eval_prompts", tr.eval_prompts);
  t.finish();

  Section p = top.child("pretrain");
  p.get("steps", c.pretrain.steps);
  p.get("batch_size", c.pretrain.batch_size);
  p.get("learning_rate", c.pretrain.learning_rate);
  p.get("max_grad_norm", c.pretrain.max_grad_norm);
  p.finish();
  top.finish();

  c.resolve();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_yaml(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "task" << YAML::Value << c.task;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "generator" << YAML::Value << to_string(c.generator);
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "d_model" << YAML::Value << c.model.d_model;
  e << YAML::Key << "n_layers" << YAML::Value << c.model.n_layers;
  e << YAML::Key << "n_heads" << YAML::Value << c.model.n_heads;
  e << YAML::Key << "max_positions" << YAML::Value << c.model.max_positions;
  e << YAML::Key << "d_ff" << YAML::Value << c.model.d_ff;
  e << YAML::Key << "init_std" << YAML::Value << c.init_std;
  e << YAML::EndMap;
  e << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "steps" << YAML::Value << c.schedule.steps;
  e << YAML::Key << "tokens_per_step" << YAML::Value << c.schedule.tokens_per_step;
  e << YAML::Key << "policy" << YAML::Value << to_string(c.schedule.policy);
  e << YAML::EndMap;
  const auto& t = c.trainer;
  e << YAML::Key << "trainer" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "group_size" << YAML::Value << t.group_size;
  e << YAML::Key << "batch_prompts" << YAML::Value << t.batch_prompts;
  e << YAML::Key << "inner_updates" << YAML::Value << t.inner_updates;
  e << YAML::Key << "clip_eps" << YAML::Value << t.clip_eps;
  e << YAML::Key << "clip" << YAML::Value << t.clip;
  e << YAML::Key << "kl_beta" << YAML::Value << t.kl_beta;
  e << YAML::Key << "advantage_norm" << YAML::Value << rltrain::to_string(t.advantage_norm);
  e << YAML::Key << "estimator" << YAML::Value << t.estimator.name();
  e << YAML::Key << "optimizer" << YAML::Value << rltrain::to_string(t.optimizer);
  e << YAML::Key << "learning_rate" << YAML::Value << t.learning_rate;
  e << YAML::Key << "adam_beta1" << YAML::Value << t.adam_beta1;
  e << YAML::Key << "adam_beta2" << YAML::Value << t.adam_beta2;
  e << YAML::Key << "adam_eps" << YAML::Value << t.adam_eps;
  e << YAML::Key << "max_grad_norm" << YAML::Value << t.max_grad_norm;
  e << YAML::Key << "temperature" << YAML::Value << t.temperature;
  e << YAML::Key << "flop_budget" << YAML::Value << t.flop_budget;
  e << YAML::Key << "eval_interval_flops" << YAML::Value << t.eval_interval_flops;
  e << YAML::Key << "max_steps" << YAML::Value << t.max_steps;
  e << YAML::Key << "eval_prompts" << YAML::Value << t.eval_prompts;
  e << YAML::EndMap;
  e << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "steps" << YAML::Value << c.pretrain.steps;
  e << YAML::Key << "batch_size" << YAML::Value << c.pretrain.batch_size;
  e << YAML::Key << "learning_rate" << YAML::Value << c.pretrain.learning_rate;
  e << YAML::Key << "max_grad_norm" << YAML::Value << c.pretrain.max_grad_norm;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* out = std::getenv("D2_OUT"); out && *out) cfg.out = out;
  if (const char* seed = std::getenv("D2_SEED"); seed && *seed) {
    try {
      std::size_t used = 0;
      cfg.seed = std::stoull(seed, &used);
      if (seed[used] != '\0') throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(std::string("D2_SEED must be an unsigned integer, got '") + seed + "'");
    }
    cfg.trainer.seed = cfg.seed;
    cfg.pretrain.seed = cfg.seed;
  }
}

}  // namespace d2::cli
