#include <doctest.h>

#include <string>

#include "d2/error.hpp"
#include "d2/tasks.hpp"

using namespace d2;
using namespace d2::tasks;

TEST_CASE("sorted reward") {
  CHECK(reward_sorted(std::vector<int>{1, 2, 3, 4}) == 1.0);
  CHECK(reward_sorted(std::vector<int>{4, 3, 2, 1}) == 0.0);
  CHECK(reward_sorted(std::vector<int>{1, 3, 2, 4}) == doctest::Approx(2.0 / 3.0));
  CHECK(reward_sorted(std::vector<int>{1, 10, 11, 4}) == 0.0);
  const auto t = make_task("sorted");
  CHECK(t->reward(std::vector<int>{1, 2}, std::vector<int>{0, 5, 9}) ==
        t->reward(std::vector<int>{9, 9}, std::vector<int>{0, 5, 9}));
}

TEST_CASE("copy reward") {
  const std::vector<int> pat{1, 2, 3, 4};
  CHECK(reward_copy(pat, pat) == 1.0);
  CHECK(reward_copy(pat, std::vector<int>{5, 6, 7, 0}) == 0.0);
  CHECK(reward_copy(pat, std::vector<int>{1, 2, 0, 0}) == 0.5);
}

TEST_CASE("mini countdown reward") {
  using namespace countdown;
  const std::vector<int> digits{2, 3, 4};
  CHECK(reward_mini_countdown(digits, 14, std::vector<int>{2, 3, 4, kTimes, kPlus}) == 1.0);
  CHECK(reward_mini_countdown(digits, 14, std::vector<int>{kPlus, 2, 3, 4, kTimes}) == 0.0);
  CHECK(reward_mini_countdown(digits, 14, std::vector<int>{2, 3, 4, kPlus, kPlus}) == doctest::Approx(0.2));
  CHECK(reward_mini_countdown(digits, 14, std::vector<int>{2, 3, kPlus, 4, 4}) == 0.0);
}

TEST_CASE("marker reward") {
  CHECK(reward_marker(std::vector<int>(12, 7), 7) == 1.0);
  CHECK(reward_marker(std::vector<int>(12, 1), 7) == 0.0);
  std::vector<int> some(12, 0);
  some[1] = some[5] = some[9] = 7;
  CHECK(reward_marker(some, 7) == 0.25);
}

TEST_CASE("every task: prompts in range, demonstrations earn full reward, rewards in [0, 1]") {
  for (const auto& name : task_names()) {
    INFO(name);
    const auto t = make_task(name);
    CHECK(t->name() == name);
    Rng r(11);
    for (int i = 0; i < 50; ++i) {
      const auto prompt = t->sample_prompt(r);
      CHECK(static_cast<int>(prompt.size()) == t->prompt_length());
      for (int tok : prompt) CHECK((tok >= 0 && tok < t->vocab_size()));
      const auto demo = t->demonstrate(prompt, r);
      CHECK(static_cast<int>(demo.size()) == t->completion_length());
      CHECK(t->reward(prompt, demo) == 1.0);
      std::vector<int> junk(static_cast<std::size_t>(t->completion_length()));
      for (int& x : junk) x = static_cast<int>(r.below(static_cast<std::uint64_t>(t->vocab_size())));
      const double rw = t->reward(prompt, junk);
      CHECK((rw >= 0.0 && rw <= 1.0));
    }
  }
}

TEST_CASE("unknown task names are rejected with the field named") {
  try {
    make_task("nope");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("task") != std::string::npos);
  }
}
