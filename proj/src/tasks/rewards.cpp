#include <algorithm>
#include <cstdint>
#include <vector>

#include "d2/error.hpp"
#include "d2/tasks.hpp"

namespace d2::tasks {

double reward_sorted(std::span<const int> completion) {
  if (completion.size() < 2) return 1.0;
  int good = 0;
  for (std::size_t i = 0; i + 1 < completion.size(); ++i) {
    const int a = completion[i], b = completion[i + 1];
    if (a >= 0 && a <= 9 && b >= 0 && b <= 9 && a <= b) ++good;
  }
  return static_cast<double>(good) / static_cast<double>(completion.size() - 1);
}

double reward_copy(std::span<const int> pattern, std::span<const int> completion) {
  if (completion.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < completion.size(); ++i)
    if (i < pattern.size() && pattern[i] == completion[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(completion.size());
}

double reward_mini_countdown(std::span<const int> digits, int target,
                             std::span<const int> completion) {
  std::vector<std::int64_t> stack;
  std::vector<int> used;
  for (int tok : completion) {
    if (tok >= 0 && tok <= 9) {
      stack.push_back(tok);
      used.push_back(tok);
      continue;
    }
    if (tok < countdown::kPlus || tok > countdown::kTimes || stack.size() < 2) return 0.0;
    const std::int64_t b = stack.back();
    stack.pop_back();
    const std::int64_t a = stack.back();
    stack.pop_back();
    if (tok == countdown::kPlus) stack.push_back(a + b);
    if (tok == countdown::kMinus) stack.push_back(a - b);
    if (tok == countdown::kTimes) stack.push_back(a * b);
  }
  if (stack.size() != 1) return 0.0;
  std::vector<int> want(digits.begin(), digits.end());
  std::sort(want.begin(), want.end());
  std::sort(used.begin(), used.end());
  if (used == want && stack.front() == target) return 1.0;
  return 0.2;
}

double reward_marker(std::span<const int> completion, int flagged) {
  if (completion.empty()) return 0.0;
  int hits = 0;
  for (int tok : completion) hits += tok == flagged;
  return static_cast<double>(hits) / static_cast<double>(completion.size());
}

}  // namespace d2::tasks
