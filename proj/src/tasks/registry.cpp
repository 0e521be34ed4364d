#include <algorithm>
#include <array>
#include <numeric>

#include "d2/error.hpp"
#include "d2/tasks.hpp"

namespace d2::tasks {
namespace {

class SortedTask final : public Task {
 public:
  std::string name() const override { return "sorted"; }
  std::string description() const override {
    return "emit 8 digits in nondecreasing order; reward is the fraction of ordered adjacent pairs";
  }
  int vocab_size() const override { return 12; }
  int prompt_length() const override { return 2; }
  int completion_length() const override { return 8; }

  std::vector<int> sample_prompt(Rng& rng) const override {
    return {static_cast<int>(rng.below(10)), static_cast<int>(rng.below(10))};
  }
  double reward(std::span<const int>, std::span<const int> completion) const override {
    return reward_sorted(completion);
  }
  std::vector<int> demonstrate(std::span<const int>, Rng& rng) const override {
    std::vector<int> out(static_cast<std::size_t>(completion_length()));
    for (int& v : out) v = static_cast<int>(rng.below(10));
    std::sort(out.begin(), out.end());
    return out;
  }
  std::string token_text(int id) const override {
    return id <= 9 ? std::to_string(id) : (id == 10 ? "_" : "#");
  }
};

class CopyTask final : public Task {
 public:
  std::string name() const override { return "copy"; }
  std::string description() const override {
    return "reproduce the 6-token prompt; reward is the per-position match rate";
  }
  int vocab_size() const override { return 8; }
  int prompt_length() const override { return 6; }
  int completion_length() const override { return 6; }

  std::vector<int> sample_prompt(Rng& rng) const override {
    std::vector<int> p(static_cast<std::size_t>(prompt_length()));
    for (int& v : p) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab_size())));
    return p;
  }
  double reward(std::span<const int> prompt, std::span<const int> completion) const override {
    return reward_copy(prompt, completion);
  }
  std::vector<int> demonstrate(std::span<const int> prompt, Rng&) const override {
    return {prompt.begin(), prompt.end()};
  }
};

struct Program {
  std::array<int, 5> tokens;
  long value;
};

// Every well-formed 5-token postfix program over a permutation of the digits.
std::vector<Program> programs(std::span<const int> digits) {
  std::vector<Program> out;
  std::array<int, 3> d{digits[0], digits[1], digits[2]};
  std::sort(d.begin(), d.end());
  const auto apply = [](long a, long b, int op) {
    return op == countdown::kPlus ? a + b : op == countdown::kMinus ? a - b : a * b;
  };
  do {
    for (int o1 = countdown::kPlus; o1 <= countdown::kTimes; ++o1) {
      for (int o2 = countdown::kPlus; o2 <= countdown::kTimes; ++o2) {
        out.push_back({{d[0], d[1], d[2], o1, o2}, apply(d[0], apply(d[1], d[2], o1), o2)});
        out.push_back({{d[0], d[1], o1, d[2], o2}, apply(apply(d[0], d[1], o1), d[2], o2)});
      }
    }
  } while (std::next_permutation(d.begin(), d.end()));
  return out;
}

class MiniCountdownTask final : public Task {
 public:
  std::string name() const override { return "mini_countdown"; }
  std::string description() const override {
    return "write a postfix expression over three digits that hits a two-digit target";
  }
  int vocab_size() const override { return countdown::kVocab; }
  int prompt_length() const override { return 5; }
  int completion_length() const override { return 5; }

  std::vector<int> sample_prompt(Rng& rng) const override {
    for (;;) {
      std::vector<int> d{static_cast<int>(rng.below(10)), static_cast<int>(rng.below(10)),
                         static_cast<int>(rng.below(10))};
      const auto all = programs(d);
      const Program& p = all[rng.below(all.size())];
      if (p.value < 0 || p.value > 99) continue;
      d.push_back(static_cast<int>(p.value / 10));
      d.push_back(static_cast<int>(p.value % 10));
      return d;
    }
  }
  double reward(std::span<const int> prompt, std::span<const int> completion) const override {
    if (prompt.size() != 5) throw ConfigError("mini_countdown: prompt must have 5 tokens");
    return reward_mini_countdown(prompt.first(3), prompt[3] * 10 + prompt[4], completion);
  }
  std::vector<int> demonstrate(std::span<const int> prompt, Rng& rng) const override {
    const long target = prompt[3] * 10L + prompt[4];
    std::vector<Program> hits;
    for (const auto& p : programs(prompt.first(3)))
      if (p.value == target) hits.push_back(p);
    if (hits.empty()) throw ConfigError("mini_countdown: prompt has no solution");
    const auto& p = hits[rng.below(hits.size())];
    return {p.tokens.begin(), p.tokens.end()};
  }
  std::string token_text(int id) const override {
    if (id == countdown::kPlus) return "+";
    if (id == countdown::kMinus) return "-";
    if (id == countdown::kTimes) return "*";
    return std::to_string(id);
  }
};

class MarkerTask final : public Task {
 public:
  static constexpr int kFlagged = 7;

  std::string name() const override { return "marker"; }
  std::string description() const override {
    return "unprompted 12-token generation rewarded by the frequency of a flagged token";
  }
  int vocab_size() const override { return 8; }
  int prompt_length() const override { return 0; }
  int completion_length() const override { return 12; }

  std::vector<int> sample_prompt(Rng&) const override { return {}; }
  double reward(std::span<const int>, std::span<const int> completion) const override {
    return reward_marker(completion, kFlagged);
  }
  std::vector<int> demonstrate(std::span<const int>, Rng&) const override {
    return std::vector<int>(static_cast<std::size_t>(completion_length()), kFlagged);
  }
};

}  // namespace

std::vector<std::string> task_names() { return {"sorted", "copy", "mini_countdown", "marker"}; }

std::unique_ptr<Task> make_task(const std::string& name) {
  if (name == "sorted") return std::make_unique<SortedTask>();
  if (name == "copy") return std::make_unique<CopyTask>();
  if (name == "mini_countdown") return std::make_unique<MiniCountdownTask>();
  if (name == "marker") return std::make_unique<MarkerTask>();
  throw ConfigError("task: unknown task '" + name +
                    "' (expected sorted, copy, mini_countdown or marker)");
}

}  // namespace d2::tasks
