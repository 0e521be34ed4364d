#include "d2/rltrain.hpp"

namespace d2::rltrain {

std::uint64_t estimate_flops(const model::ModelConfig& config, const OpTrace& trace) {
  std::uint64_t total = 0;
  for (std::size_t s : trace.forward_only) total += model::forward_flops(config, s);
  for (std::size_t s : trace.with_backward) total += 3 * model::forward_flops(config, s);
  return total;
}

}  // namespace d2::rltrain
