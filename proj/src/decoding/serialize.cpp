#include "d2/decoding.hpp"
#include "d2/error.hpp"

namespace d2::decoding {

nlohmann::json to_json(const Trajectory& traj) {
  nlohmann::json j;
  j["prompt"] = traj.prompt;
  j["tokens"] = traj.tokens;
  j["decode_steps"] = traj.decode_steps();
  j["unmask"] = traj.schedule.unmask;
  j["logprobs"] = traj.logprobs;
  j["generator"] = to_string(traj.generator);
  j["steps"] = traj.schedule.steps;
  j["tokens_per_step"] = traj.schedule.tokens_per_step;
  j["policy"] = to_string(traj.schedule.policy);
  return j;
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  try {
    Trajectory t;
    t.prompt = j.at("prompt").get<std::vector<int>>();
    t.tokens = j.at("tokens").get<std::vector<int>>();
    t.logprobs = j.at("logprobs").get<std::vector<double>>();
    t.generator = parse_generator(j.at("generator").get<std::string>());
    auto& s = t.schedule;
    s.unmask = j.at("unmask").get<std::vector<std::vector<int>>>();
    s.steps = j.at("steps").get<int>();
    s.length = t.length();
    s.tokens_per_step = j.at("tokens_per_step").get<int>();
    s.policy = parse_selection_policy(j.at("policy").get<std::string>());
    for (const auto& u : s.unmask) s.step_sizes.push_back(static_cast<int>(u.size()));
    s.validate();
    if (j.contains("decode_steps") && j["decode_steps"].get<std::vector<int>>() != s.decode_steps())
      throw FormatError("trajectory decode_steps disagree with unmask sets");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trajectory json: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("trajectory json: ") + e.what());
  }
}

}  // namespace d2::decoding
