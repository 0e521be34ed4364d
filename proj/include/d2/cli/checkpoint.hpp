#pragma once

#include <string>
#include <vector>

#include "d2/model.hpp"

namespace d2::cli {

// Layout, all integers little-endian:
//   "D2CK" | u32 version | u32 len + config text |
//   per parameter: u32 len + name | u32 rank | u64 dims[rank] | f64 data[]
// Parameters run to the end of the file.
inline constexpr unsigned kCheckpointVersion = 1;

struct Checkpoint {
  std::string config;  // RunConfig YAML
  model::ModelParams params;
};

std::vector<char> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace d2::cli
