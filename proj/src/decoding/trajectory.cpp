#include "d2/trajectory.hpp"

#include <algorithm>

#include "d2/error.hpp"

namespace d2 {

std::string to_string(SelectionPolicy p) {
  return p == SelectionPolicy::random ? "random" : "top_confidence";
}

std::string to_string(Generator g) {
  return g == Generator::any_order ? "any_order" : "bidirectional";
}

SelectionPolicy parse_selection_policy(const std::string& s) {
  if (s == "random") return SelectionPolicy::random;
  if (s == "top_confidence") return SelectionPolicy::top_confidence;
  throw ConfigError("selection policy must be random or top_confidence, got '" + s + "'");
}

Generator parse_generator(const std::string& s) {
  if (s == "any_order") return Generator::any_order;
  if (s == "bidirectional") return Generator::bidirectional;
  throw ConfigError("generator must be any_order or bidirectional, got '" + s + "'");
}

bool DecodeSchedule::realized() const {
  if (static_cast<int>(unmask.size()) != steps || static_cast<int>(step_sizes.size()) != steps)
    return false;
  for (int t = 0; t < steps; ++t) {
    if (static_cast<int>(unmask[static_cast<std::size_t>(t)].size()) != step_sizes[static_cast<std::size_t>(t)])
      return false;
  }
  return true;
}

std::vector<int> DecodeSchedule::decode_steps() const {
  std::vector<int> out(static_cast<std::size_t>(length), -1);
  for (std::size_t t = 0; t < unmask.size(); ++t) {
    for (int l : unmask[t]) {
      if (l < 0 || l >= length) throw ConfigError("schedule position out of range");
      out[static_cast<std::size_t>(l)] = static_cast<int>(t);
    }
  }
  return out;
}

void DecodeSchedule::validate() const {
  if (steps < 1 || length < 0) throw ConfigError("schedule needs T >= 1 and L >= 0");
  if (!realized()) throw ConfigError("schedule is not fully assigned");
  std::vector<int> seen(static_cast<std::size_t>(length), 0);
  for (const auto& u : unmask) {
    for (int l : u) {
      if (l < 0 || l >= length) throw ConfigError("schedule position out of range");
      if (seen[static_cast<std::size_t>(l)]++) throw ConfigError("schedule sets U_t overlap");
    }
  }
  for (int s : seen)
    if (s != 1) throw ConfigError("schedule sets U_t do not cover every position");
}

double unmask_probability(const DecodeSchedule& s, int step) {
  int remaining = 0;
  for (int t = 0; t <= step; ++t) remaining += s.step_sizes.at(static_cast<std::size_t>(t));
  if (remaining == 0) return 0.0;
  return static_cast<double>(s.step_sizes.at(static_cast<std::size_t>(step))) / remaining;
}

std::vector<int> Trajectory::earlier_positions(int l) const {
  const auto ts = decode_steps();
  std::vector<int> out;
  for (int j = 0; j < length(); ++j)
    if (ts[static_cast<std::size_t>(j)] > ts.at(static_cast<std::size_t>(l))) out.push_back(j);
  return out;
}

void Trajectory::validate(int mask_token) const {
  try {
    schedule.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("trajectory schedule: ") + e.what());
  }
  if (schedule.length != length()) throw FormatError("trajectory length does not match schedule");
  if (!logprobs.empty() && logprobs.size() != tokens.size())
    throw FormatError("trajectory has " + std::to_string(logprobs.size()) + " log-probs for " +
                      std::to_string(tokens.size()) + " tokens");
  for (double lp : logprobs)
    if (lp > 0.0) throw FormatError("trajectory log-prob is positive");
  for (int tok : tokens) {
    if (tok < 0 || tok >= mask_token) throw FormatError("trajectory token outside emit vocabulary");
  }
}

std::vector<int> context_tokens(std::span<const int> prompt, std::span<const int> tokens,
                                std::span<const int> decode_steps, int step, int mask_token) {
  std::vector<int> out(prompt.begin(), prompt.end());
  out.reserve(prompt.size() + tokens.size());
  for (std::size_t l = 0; l < tokens.size(); ++l)
    out.push_back(decode_steps[l] > step ? tokens[l] : mask_token);
  return out;
}

}  // namespace d2
