#include "d2/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "d2/cli/checkpoint.hpp"
#include "d2/cli/config.hpp"
#include "d2/cli/svg.hpp"
#include "d2/error.hpp"
#include "d2/likelihood.hpp"
#include "d2/oracle.hpp"
#include "d2/rltrain.hpp"
#include "d2/tasks.hpp"

namespace d2::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;

struct LoadedModel {
  RunConfig config;
  model::ModelParams params;
};

void apply_overrides(RunConfig& cfg, const CommonOptions& o) {
  apply_env_overrides(cfg);
  if (!o.out.empty()) cfg.out = o.out;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.trainer.seed = cfg.seed;
    cfg.pretrain.seed = cfg.seed;
  }
  if (!o.estimator.empty()) cfg.trainer.estimator = likelihood::Estimator::parse(o.estimator);
}

LoadedModel load_model(const CommonOptions& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Checkpoint ck = load_checkpoint(o.checkpoint);
  LoadedModel m;
  m.config = parse_run_config(ck.config);
  apply_overrides(m.config, o);
  Rng unused(0);
  const auto expected = model::init_params(m.config.model, unused);
  if (expected.names != ck.params.names)
    throw FormatError("checkpoint parameters do not match its model config");
  for (std::size_t i = 0; i < expected.tensors.size(); ++i) {
    if (expected.tensors[i].shape != ck.params.tensors[i].shape)
      throw FormatError("checkpoint tensor '" + expected.names[i] + "' has shape " +
                        diffmath::shape_string(ck.params.tensors[i].shape) + ", expected " +
                        diffmath::shape_string(expected.tensors[i].shape));
  }
  m.params = std::move(ck.params);
  m.params.config = m.config.model;
  return m;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string path_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

}  // namespace

int cmd_train(const CommonOptions& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_run_config(o.config);
  apply_overrides(cfg, o);
  cfg.resolve();
  ensure_dir(cfg.out);
  const std::string blob = to_yaml(cfg);
  write_text(path_in(cfg.out, "config.yaml"), blob);

  const auto task = tasks::make_task(cfg.task);
  Rng init_rng = Rng::stream({cfg.seed, kInitStream});
  auto params = model::init_params(cfg.model, init_rng, cfg.init_std);
  if (cfg.pretrain.steps > 0) {
    const double loss = rltrain::pretrain(params, *task, cfg.schedule, cfg.generator, cfg.pretrain);
    std::cerr << "pretrain: " << cfg.pretrain.steps << " steps, final loss " << loss << "\n";
  }
  save_checkpoint(path_in(cfg.out, "init.d2ck"), {blob, params});

  std::ofstream metrics(path_in(cfg.out, "metrics.jsonl"), std::ios::binary | std::ios::trunc);
  if (!metrics) throw ConfigError("cannot write metrics file in '" + cfg.out + "'");
  rltrain::TrainCallbacks cb;
  cb.on_metrics = [&](const rltrain::MetricsRecord& r) {
    metrics << rltrain::to_jsonl(r) << '\n';
    metrics.flush();
    std::cerr << "step " << r.step << "  flops " << r.flops << "  reward " << r.mean_reward << "\n";
  };
  cb.on_eval = [&](const rltrain::TrainState& st) {
    save_checkpoint(path_in(cfg.out, "latest.d2ck"), {blob, st.theta});
  };
  try {
    const auto result = rltrain::train(params, *task, cfg.schedule, cfg.generator, cfg.trainer, cb);
    save_checkpoint(path_in(cfg.out, "final.d2ck"), {blob, result.params});
  } catch (const rltrain::NonFiniteLoss& e) {
    write_text(path_in(cfg.out, "nonfinite_batch.json"), e.dump().dump(2));
    throw;
  }
  return 0;
}

int cmd_eval(const CommonOptions& o) {
  auto m = load_model(o);
  const auto task = tasks::make_task(m.config.task);
  const int n = o.samples.value_or(m.config.trainer.eval_prompts);
  const double reward = rltrain::evaluate(m.params, *task, m.config.schedule, m.config.generator, n,
                                          m.config.trainer.temperature, m.config.seed);
  nlohmann::ordered_json j;
  j["task"] = m.config.task;
  j["samples"] = n;
  j["seed"] = m.config.seed;
  j["mean_reward"] = reward;
  ensure_dir(m.config.out);
  write_text(path_in(m.config.out, "eval.json"), j.dump() + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_sample(const CommonOptions& o) {
  auto m = load_model(o);
  const auto task = tasks::make_task(m.config.task);
  const int n = o.samples.value_or(16);
  if (n < 0) throw ConfigError("--samples must be >= 0");
  ensure_dir(m.config.out);
  std::ofstream out(path_in(m.config.out, "samples.jsonl"), std::ios::binary | std::ios::trunc);
  for (int i = 0; i < n; ++i) {
    Rng r = Rng::stream({m.config.seed, 0x73616d70, static_cast<std::uint64_t>(i)});
    const auto prompt = task->sample_prompt(r);
    const auto traj = decoding::sample(m.params, prompt, m.config.schedule.draw(r),
                                       m.config.generator, m.config.trainer.temperature, r);
    auto j = decoding::to_json(traj);
    j["reward"] = task->reward(traj.prompt, traj.tokens);
    std::string text;
    for (int tok : traj.tokens) text += task->token_text(tok) + " ";
    if (!text.empty()) text.pop_back();
    j["text"] = text;
    out << j.dump() << '\n';
  }
  return 0;
}

int cmd_dn_sweep(const CommonOptions& o) {
  auto m = load_model(o);
  const auto task = tasks::make_task(m.config.task);
  const int T = m.config.schedule.steps;
  std::vector<int> ns = o.ns;
  if (ns.empty())
    for (int n = 1; n <= T; ++n)
      if (T % n == 0) ns.push_back(n);
  const int samples = o.samples.value_or(256);
  Rng rng = Rng::stream({m.config.seed, 0x646e});
  const likelihood::PromptSampler prompts = [&](Rng& r) { return task->sample_prompt(r); };
  const auto est =
      likelihood::estimate_DN_sweep(m.params, prompts, m.config.schedule, m.config.generator, ns, samples, rng);

  // Block sensitivity from a smaller sampled set; a lower bound on the true maximum.
  std::vector<Trajectory> trajs;
  const int eps_samples = std::min(samples, 32);
  for (int i = 0; i < eps_samples; ++i) {
    Rng r = Rng::stream({m.config.seed, 0x657073, static_cast<std::uint64_t>(i)});
    const auto prompt = task->sample_prompt(r);
    trajs.push_back(decoding::sample(m.params, prompt, m.config.schedule.draw(r), m.config.generator, 1.0, r));
  }
  std::vector<likelihood::BoundReport> rows;
  Series series;
  for (const auto& e : est) {
    const double eps = likelihood::block_sensitivity(m.params, trajs, e.n);
    rows.push_back(likelihood::make_bound_report(m.config.schedule.length, T, e.n, e.mean, e.std_error,
                                                 likelihood::EstimationMode::monte_carlo, e.samples, eps,
                                                 likelihood::EstimationMode::monte_carlo));
    series.x.push_back(e.n);
    series.y.push_back(e.mean);
    series.err.push_back(2.0 * e.std_error);
  }
  ensure_dir(m.config.out);
  std::ofstream csv(path_in(m.config.out, "dn_sweep.csv"), std::ios::binary | std::ios::trunc);
  likelihood::write_dn_sweep_csv(csv, rows);
  write_text(path_in(m.config.out, "dn_sweep.svg"),
             line_chart_svg("StepMerge KL gap vs segments", "N (segments)", "D_N (nats, +/- 2 SE)", series));
  likelihood::write_dn_sweep_csv(std::cout, rows);
  return 0;
}

namespace {

struct Check {
  std::string name;
  bool passed;
  double value;
  double threshold;
};

model::ModelConfig tiny_config(int vocab) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_positions = 16;
  c.d_ff = 16;
  return c;
}

double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), 1e-10));
  return worst;
}

}  // namespace

int cmd_verify(const CommonOptions& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  std::vector<Check> checks;
  const std::vector<int> prompt{1};

  {
    Rng r = Rng::stream({seed, 1});
    const auto p = model::random_params(tiny_config(3), r, 0.5);
    const auto all = oracle::enumerate_trajectories(p, prompt, oracle::ScheduleFamily::random_order(2, 2, 1),
                                                    Generator::any_order);
    double mass = 0.0;
    for (const auto& e : all) mass += e.prob;
    checks.push_back({"enumerated probabilities sum to one", std::abs(mass - 1.0) <= 1e-10,
                      std::abs(mass - 1.0), 1e-10});
  }
  {
    double worst = 0.0;
    for (int draw = 0; draw < 3; ++draw) {
      Rng r = Rng::stream({seed, 2, static_cast<std::uint64_t>(draw)});
      const auto p = model::random_params(tiny_config(2), r, 0.5);
      std::vector<double> table(16);
      for (double& x : table) x = r.uniform();
      const oracle::RewardFn reward = [&](std::span<const int>, std::span<const int> t) {
        std::size_t key = 0;
        for (int v : t) key = key * 2 + static_cast<std::size_t>(v);
        return table[key];
      };
      const auto fam = oracle::ScheduleFamily::random_order(2, 2, 1);
      worst = std::max(worst, max_rel_error(oracle::estimator_expected_gradient(p, prompt, fam, Generator::any_order, reward),
                                            oracle::exact_policy_gradient(p, prompt, fam, Generator::any_order, reward)));
    }
    checks.push_back({"per-step estimator gradient equals exact policy gradient", worst < 1e-6, worst, 1e-6});
  }
  {
    Rng r = Rng::stream({seed, 3});
    const auto p = model::random_params(tiny_config(6), r, 0.5);
    const decoding::ScheduleSpec spec{6, 3, 2, SelectionPolicy::random};
    const auto ao = oracle::oneshot_equivalence_suite(p, spec, Generator::any_order, 2, 20, seed);
    const auto bi = oracle::oneshot_equivalence_suite(p, spec, Generator::bidirectional, 2, 20, seed);
    checks.push_back({"one-shot equals per-step log-probs (any-order)", ao.equivalent && ao.causal_trials == ao.trials,
                      ao.max_gap, 1e-9});
    checks.push_back({"one-shot differs from per-step log-probs (bidirectional)", bi.max_gap > 1e-3 && bi.causal_trials == 0,
                      bi.max_gap, 1e-3});
  }
  {
    int violations = 0;
    double worst_slack = INFINITY;
    for (int draw = 0; draw < 3; ++draw) {
      Rng r = Rng::stream({seed, 4, static_cast<std::uint64_t>(draw)});
      const auto p = model::random_params(tiny_config(3), r, 0.5);
      for (int n : {1, 3}) {
        const auto ex = oracle::exact_DN_and_eps(p, prompt, oracle::ScheduleFamily::random_order(3, 3, 1),
                                                 Generator::any_order, n);
        const double bound = likelihood::stepmerge_kl_bound(3, 3, n, ex.eps_block);
        violations += ex.dn > bound;
        worst_slack = std::min(worst_slack, bound - ex.dn);
      }
    }
    checks.push_back({"StepMerge KL gap within its bound", violations == 0, worst_slack, 0.0});
  }
  {
    Rng r = Rng::stream({seed, 5});
    const auto p = model::random_params(tiny_config(4), r, 0.3);
    const decoding::ScheduleSpec spec{4, 2, 2, SelectionPolicy::random};
    Rng sr = Rng::stream({seed, 6});
    const auto traj = decoding::sample(p, std::vector<int>{1, 2}, spec.draw(sr), Generator::any_order, 1.0, sr);
    std::vector<diffmath::Array> ps = p.tensors;
    const auto fn = [&](diffmath::Tape& t, std::span<const diffmath::Var> vars) {
      model::BoundModel m{&p.config, {vars.begin(), vars.end()}};
      return diffmath::sum(t, likelihood::score_tokens(t, m, traj, likelihood::Estimator::full()).logprobs);
    };
    const auto res = diffmath::grad_check(fn, ps, 1e-6);
    checks.push_back({"full model gradient matches finite differences", res.max_rel_error < 1e-4,
                      res.max_rel_error, 1e-4});
  }

  bool all = true;
  nlohmann::ordered_json report;
  report["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    all = all && c.passed;
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["passed"] = c.passed;
    j["value"] = c.value;
    j["threshold"] = c.threshold;
    report["checks"].push_back(j);
    std::cout << (c.passed ? "PASS  " : "FAIL  ") << c.name << "  (" << c.value << ")\n";
  }
  report["passed"] = all;
  const std::string out = o.out.empty() ? "." : o.out;
  ensure_dir(out);
  write_text(path_in(out, "report.json"), report.dump(2) + "\n");
  return all ? 0 : 1;
}

int run(int argc, char** argv) {
  CLI::App app{"d2: reinforcement learning workbench for masked diffusion language models", "d2"};
  app.require_subcommand(1);
  CommonOptions o;
  unsigned long long seed = 0;
  int samples = 0;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "override the run seed");
    sub->add_option("--out", o.out, "output directory");
  };
  auto* train = app.add_subcommand("train", "run GRPO training from a config file");
  train->add_option("--config", o.config, "YAML run config")->required();
  train->add_option("--estimator", o.estimator, "full | stepmerge:N | anyorder");
  common(train);
  auto* eval = app.add_subcommand("eval", "mean reward of a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint)->required();
  eval->add_option("--samples", samples, "number of evaluation prompts");
  common(eval);
  auto* sample = app.add_subcommand("sample", "write sampled trajectories as JSON lines");
  sample->add_option("--checkpoint", o.checkpoint)->required();
  sample->add_option("--samples", samples, "number of trajectories");
  common(sample);
  auto* sweep = app.add_subcommand("dn-sweep", "estimate D_N for several segment counts");
  sweep->add_option("--checkpoint", o.checkpoint)->required();
  sweep->add_option("--samples", samples, "trajectories per estimate (default 256)");
  sweep->add_option("--n", o.ns, "segment counts (default: every divisor of T)")->delimiter(',');
  common(sweep);
  auto* verify = app.add_subcommand("verify", "run the exact-enumeration checks");
  common(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed")) o.seed = seed;
    if (sub != verify && sub != train && sub->count("--samples")) o.samples = samples;
  }
  try {
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (sample->parsed()) return cmd_sample(o);
    if (sweep->parsed()) return cmd_dn_sweep(o);
    if (verify->parsed()) return cmd_verify(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace d2::cli
