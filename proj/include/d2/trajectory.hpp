#pragma once

#include <span>
#include <string>
#include <vector>

// Decoding schedules and completed trajectories. Completion positions are
// 0-based (l in [0, L)); steps run t = T-1 (first decode) down to t = 0.
namespace d2 {

enum class SelectionPolicy { random, top_confidence };
enum class Generator { bidirectional, any_order };

std::string to_string(SelectionPolicy p);
std::string to_string(Generator g);
SelectionPolicy parse_selection_policy(const std::string& s);
Generator parse_generator(const std::string& s);

struct DecodeSchedule {
  int steps = 0;            // T
  int length = 0;           // L
  int tokens_per_step = 0;  // k
  SelectionPolicy policy = SelectionPolicy::random;
  std::vector<int> step_sizes;           // |U_t|, indexed by t
  std::vector<std::vector<int>> unmask;  // U_t, indexed by t, sorted; empty while pending

  // True when every U_t is assigned with its planned size.
  bool realized() const;
  // t_l per position; -1 for positions not assigned to any step yet.
  std::vector<int> decode_steps() const;
  // Throws ConfigError unless the U_t form a partition of {0..L-1} with
  // |U_t| == step_sizes[t].
  void validate() const;
};

// Unmask fraction implied at step t: |U_t| / (#positions still masked at t).
double unmask_probability(const DecodeSchedule& s, int step);

struct Trajectory {
  std::vector<int> prompt;
  std::vector<int> tokens;  // x_0
  DecodeSchedule schedule;  // realized
  std::vector<double> logprobs;  // log pi_old(x_0^l | x_{t_l+1}, q) at temperature 1
  Generator generator = Generator::any_order;

  int length() const { return static_cast<int>(tokens.size()); }
  int steps() const { return schedule.steps; }
  int prompt_length() const { return static_cast<int>(prompt.size()); }
  std::vector<int> decode_steps() const { return schedule.decode_steps(); }
  // Omega_l: positions decoded strictly before l.
  std::vector<int> earlier_positions(int l) const;
  // Throws FormatError on inconsistent fields.
  void validate(int mask_token) const;
};

// Prompt followed by the completion as it stood just before step `step`
// ran: positions with t_l > step hold x_0, all others hold the mask token.
std::vector<int> context_tokens(std::span<const int> prompt, std::span<const int> tokens,
                                std::span<const int> decode_steps, int step, int mask_token);

}  // namespace d2
