#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "d2/cli/checkpoint.hpp"
#include "d2/cli/commands.hpp"
#include "d2/cli/config.hpp"
#include "d2/cli/svg.hpp"
#include "d2/error.hpp"
#include "support.hpp"

using namespace d2;
using namespace d2::cli;
namespace fs = std::filesystem;

namespace {

const char* kSmokeConfig = R"(task: sorted
seed: 3
generator: any_order
model: {d_model: 16, n_layers: 2, n_heads: 2, max_positions: 24}
schedule: {steps: 4, tokens_per_step: 2}
trainer:
  group_size: 2
  batch_prompts: 1
  inner_updates: 1
  kl_beta: 0.01
  estimator: stepmerge:2
  max_steps: 2
  eval_prompts: 4
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("d2_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "d2");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "run.yaml";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("config parsing fills task-derived fields") {
  auto cfg = parse_run_config(kSmokeConfig);
  cfg.resolve();
  CHECK(cfg.task == "sorted");
  CHECK(cfg.seed == 3);
  CHECK(cfg.model.vocab_size == 12);
  CHECK(cfg.schedule.length == 8);
  CHECK(cfg.trainer.group_size == 2);
  CHECK(cfg.trainer.estimator.segments == 2);
  CHECK(cfg.trainer.seed == 3);
}

TEST_CASE("config round-trips through YAML") {
  auto cfg = parse_run_config(kSmokeConfig);
  cfg.resolve();
  auto back = parse_run_config(to_yaml(cfg));
  back.resolve();
  CHECK(to_yaml(back) == to_yaml(cfg));
  CHECK(back.model == cfg.model);
  CHECK(back.trainer.clip_eps == cfg.trainer.clip_eps);
}

TEST_CASE("config errors name the field") {
  const auto message = [](const std::string& yaml) {
    try {
      auto c = parse_run_config(yaml);
      c.resolve();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("task: sorted\ntrainer: {max_steps: 1, grup_size: 2}\n").find("trainer.grup_size") != std::string::npos);
  CHECK(message("task: nope\ntrainer: {max_steps: 1}\n").find("task") != std::string::npos);
  CHECK(message("task: sorted\ntrainer: {max_steps: 1}\nschedule: {steps: 5, tokens_per_step: 2}\n").find("schedule") !=
        std::string::npos);
  CHECK(message("task: sorted\ntrainer: {max_steps: 1, estimator: 'stepmerge:3'}\n").find("stepmerge") != std::string::npos);
  CHECK(message("task: sorted\ntrainer: {max_steps: 1}\nmodel: {max_positions: 10}\n").find("max_positions") !=
        std::string::npos);
  CHECK(message("task: sorted\n").find("max_steps") != std::string::npos);
}

TEST_CASE("environment overrides output directory and seed") {
  auto cfg = parse_run_config(kSmokeConfig);
  setenv("D2_OUT", "/tmp/elsewhere", 1);
  setenv("D2_SEED", "42", 1);
  apply_env_overrides(cfg);
  unsetenv("D2_OUT");
  unsetenv("D2_SEED");
  CHECK(cfg.out == "/tmp/elsewhere");
  CHECK(cfg.seed == 42);
}

TEST_CASE("checkpoint round trip is byte-identical and reproduces logits") {
  const auto p = testing::tiny_model(5, 1);
  const Checkpoint ck{"task: sorted\n", p};
  const auto bytes = encode_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "D2CK");
  const auto back = decode_checkpoint(bytes);
  CHECK(back.config == ck.config);
  CHECK(encode_checkpoint(back) == bytes);
  auto q = back.params;
  q.config = p.config;
  const std::vector<int> toks{1, 5, 5};
  const auto mask = model::build_bidirectional_mask(1, 2);
  CHECK(model::forward_logits(p, toks, model::sequential_positions(3), mask).values ==
        model::forward_logits(q, toks, model::sequential_positions(3), mask).values);

  const auto dir = scratch("ck");
  save_checkpoint((dir / "a.d2ck").string(), ck);
  CHECK(encode_checkpoint(load_checkpoint((dir / "a.d2ck").string())) == bytes);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto bytes = encode_checkpoint({"x", testing::tiny_model(3, 2)});
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/file.d2ck"), ConfigError);
}

TEST_CASE("svg chart") {
  const auto svg = line_chart_svg("t", "x", "y", {{1, 2, 4}, {0.5, 0.2, 0.0}, {0.1, 0.1, 0.0}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
}

TEST_CASE("train replays byte-identically and the other subcommands run on its checkpoint") {
  const auto dir = scratch("train");
  const auto cfg = write_config(dir, kSmokeConfig);
  const auto a = dir / "a", b = dir / "b";
  REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", a.string()}) == 0);
  REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", b.string()}) == 0);
  const auto metrics = slurp(a / "metrics.jsonl");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') >= 2);
  CHECK(metrics == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "final.d2ck") == slurp(b / "final.d2ck"));
  CHECK(slurp(a / "latest.d2ck") == slurp(b / "latest.d2ck"));

  REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", (dir / "c").string(), "--seed", "4"}) == 0);
  CHECK(metrics != slurp(dir / "c" / "metrics.jsonl"));

  const auto ck = (a / "final.d2ck").string();
  REQUIRE(run_cli({"eval", "--checkpoint", ck, "--out", (dir / "e1").string(), "--samples", "8"}) == 0);
  REQUIRE(run_cli({"eval", "--checkpoint", ck, "--out", (dir / "e2").string(), "--samples", "8"}) == 0);
  CHECK(slurp(dir / "e1" / "eval.json") == slurp(dir / "e2" / "eval.json"));

  REQUIRE(run_cli({"sample", "--checkpoint", ck, "--out", (dir / "s0").string(), "--samples", "0"}) == 0);
  CHECK(fs::file_size(dir / "s0" / "samples.jsonl") == 0);
  REQUIRE(run_cli({"sample", "--checkpoint", ck, "--out", (dir / "s3").string(), "--samples", "3"}) == 0);
  std::ifstream in(dir / "s3" / "samples.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line); ++lines) CHECK(nlohmann::json::parse(line).contains("reward"));
  CHECK(lines == 3);

  REQUIRE(run_cli({"dn-sweep", "--checkpoint", ck, "--out", (dir / "dn").string(), "--samples", "16", "--n", "1,2,4"}) == 0);
  std::ifstream csv(dir / "dn" / "dn_sweep.csv");
  std::vector<std::string> rows;
  for (std::string line; std::getline(csv, line);) rows.push_back(line);
  REQUIRE(rows.size() == 4);
  CHECK(rows[3].rfind("4,0,0,", 0) == 0);
  CHECK(fs::exists(dir / "dn" / "dn_sweep.svg"));
}

TEST_CASE("train rejects a bad task with a nonzero exit") {
  const auto dir = scratch("badtask");
  std::string text = kSmokeConfig;
  text.replace(text.find("sorted"), 6, "sortd");
  const auto cfg = write_config(dir, text);
  CHECK(run_cli({"train", "--config", cfg.string(), "--out", (dir / "o").string()}) != 0);
  CHECK(run_cli({"eval", "--checkpoint", (dir / "missing.d2ck").string()}) != 0);
}

TEST_CASE("verify writes an all-pass report") {
  const auto dir = scratch("verify");
  CHECK(run_cli({"verify", "--out", dir.string()}) == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(j["passed"] == true);
  CHECK(j["checks"].size() >= 5);
}
