#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "d2/rng.hpp"

namespace d2::tasks {

// A verifiable-reward task: prompt sampler plus a pure reward on the
// completion tokens. Token ids are in [0, vocab_size).
class Task {
 public:
  virtual ~Task() = default;

  virtual std::string name() const = 0;
  virtual std::string description() const = 0;
  virtual int vocab_size() const = 0;
  virtual int prompt_length() const = 0;
  virtual int completion_length() const = 0;

  virtual std::vector<int> sample_prompt(Rng& rng) const = 0;
  virtual double reward(std::span<const int> prompt, std::span<const int> completion) const = 0;
  // A reward-1 completion for the prompt, used as supervised data.
  virtual std::vector<int> demonstrate(std::span<const int> prompt, Rng& rng) const = 0;

  // Printable token, for logs and samples.
  virtual std::string token_text(int id) const { return std::to_string(id); }
};

// Fraction of adjacent completion pairs in nondecreasing digit order. Tokens
// 0..9 are digits; ids 10 and 11 are filler that never forms a valid pair.
double reward_sorted(std::span<const int> completion);
// Per-position match rate against `pattern`.
double reward_copy(std::span<const int> pattern, std::span<const int> completion);
// prompt = {d1, d2, d3, target}; completion is a postfix program over digit
// tokens 0..9 and operators. 1 when it uses each prompt digit exactly once
// and evaluates to the target, 0.2 when merely well-formed, 0 otherwise.
double reward_mini_countdown(std::span<const int> digits, int target,
                             std::span<const int> completion);
// Frequency of `flagged` in the completion.
double reward_marker(std::span<const int> completion, int flagged);

// Token ids used by the mini countdown task.
namespace countdown {
inline constexpr int kPlus = 10;
inline constexpr int kMinus = 11;
inline constexpr int kTimes = 12;
inline constexpr int kVocab = 13;
}  // namespace countdown

// "sorted", "copy", "mini_countdown", "marker". Throws ConfigError naming
// the task field for anything else.
std::unique_ptr<Task> make_task(const std::string& name);
std::vector<std::string> task_names();

}  // namespace d2::tasks
