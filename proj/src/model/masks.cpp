#include <algorithm>
#include <limits>
#include <sstream>

#include "d2/error.hpp"
#include "d2/model.hpp"

namespace d2::model {

void AttentionMaskMatrix::set_row(std::size_t q, std::span<const std::size_t> keys) {
  for (std::size_t k = 0; k < n_; ++k) set(q, k, false);
  for (std::size_t k : keys) set(q, k, true);
}

std::vector<std::size_t> AttentionMaskMatrix::row(std::size_t q) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < n_; ++k)
    if (allows(q, k)) out.push_back(k);
  return out;
}

std::vector<double> AttentionMaskMatrix::bias() const {
  std::vector<double> b(bits_.size());
  for (std::size_t i = 0; i < bits_.size(); ++i)
    b[i] = bits_[i] ? 0.0 : -std::numeric_limits<double>::infinity();
  return b;
}

std::string AttentionMaskMatrix::to_string() const {
  std::ostringstream os;
  for (std::size_t q = 0; q < n_; ++q) {
    for (std::size_t k = 0; k < n_; ++k) os << (allows(q, k) ? '1' : '.');
    os << '\n';
  }
  return os.str();
}

PositionAssignment sequential_positions(std::size_t n) {
  PositionAssignment p;
  p.pos.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.pos[i] = static_cast<int>(i);
  return p;
}

AttentionMaskMatrix build_decoding_mask(const DecodeSchedule& schedule, int step, int prompt_len) {
  if (step < 0 || step >= schedule.steps)
    throw ConfigError("decoding step " + std::to_string(step) + " outside [0, " +
                      std::to_string(schedule.steps) + ")");
  if (prompt_len < 0) throw ConfigError("negative prompt length");
  const int L = schedule.length;
  const auto lp = static_cast<std::size_t>(prompt_len);
  for (int t = step + 1; t < schedule.steps; ++t) {
    if (static_cast<std::size_t>(t) >= schedule.unmask.size() ||
        schedule.unmask[static_cast<std::size_t>(t)].size() !=
            static_cast<std::size_t>(schedule.step_sizes.at(static_cast<std::size_t>(t))))
      throw ConfigError("decoding mask for step " + std::to_string(step) +
                        " needs every earlier step assigned");
  }
  const auto ts = schedule.decode_steps();
  AttentionMaskMatrix m(lp + static_cast<std::size_t>(L));
  for (std::size_t q = 0; q < lp; ++q)
    for (std::size_t k = 0; k < lp; ++k) m.set(q, k);
  for (int l = 0; l < L; ++l) {
    const std::size_t q = lp + static_cast<std::size_t>(l);
    for (std::size_t k = 0; k < lp; ++k) m.set(q, k);
    const int tl = ts[static_cast<std::size_t>(l)];
    if (tl > step) {
      // decoded: Omega_l and the tokens unmasked together with l
      for (int j = 0; j < L; ++j) {
        const int tj = ts[static_cast<std::size_t>(j)];
        if (tj >= tl) m.set(q, lp + static_cast<std::size_t>(j));
      }
    } else {
      for (int j = 0; j < L; ++j) {
        if (ts[static_cast<std::size_t>(j)] > step) m.set(q, lp + static_cast<std::size_t>(j));
      }
      m.set(q, q);
    }
  }
  return m;
}

AttentionMaskMatrix build_bidirectional_mask(int prompt_len, int length) {
  if (prompt_len < 0 || length < 0) throw ConfigError("negative prompt or completion length");
  const auto lp = static_cast<std::size_t>(prompt_len);
  const std::size_t n = lp + static_cast<std::size_t>(length);
  AttentionMaskMatrix m(n);
  for (std::size_t q = 0; q < n; ++q) {
    const std::size_t width = q < lp ? lp : n;
    for (std::size_t k = 0; k < width; ++k) m.set(q, k);
  }
  return m;
}

OneShotInput build_oneshot_mask(const Trajectory& traj, int mask_token) {
  const DecodeSchedule& s = traj.schedule;
  if (s.length != traj.length()) throw ConfigError("one-shot: schedule length mismatch");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("one-shot: inconsistent decode steps: ") + e.what());
  }
  const int L = traj.length();
  const auto lp = static_cast<std::size_t>(traj.prompt_length());
  const auto ul = static_cast<std::size_t>(L);
  const auto ts = s.decode_steps();

  OneShotInput in;
  in.tokens = traj.prompt;
  in.tokens.insert(in.tokens.end(), traj.tokens.begin(), traj.tokens.end());
  in.tokens.insert(in.tokens.end(), ul, mask_token);
  const std::size_t n = lp + 2 * ul;
  in.positions.pos.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    in.positions.pos[i] = static_cast<int>(i < lp + ul ? i : i - ul);

  in.mask = AttentionMaskMatrix(n);
  for (std::size_t q = 0; q < lp; ++q)
    for (std::size_t k = 0; k < lp; ++k) in.mask.set(q, k);
  for (std::size_t l = 0; l < ul; ++l) {
    const std::size_t clean = lp + l;
    const std::size_t masked = lp + ul + l;
    for (std::size_t k = 0; k < lp; ++k) {
      in.mask.set(clean, k);
      in.mask.set(masked, k);
    }
    for (std::size_t j = 0; j < ul; ++j) {
      if (ts[j] >= ts[l]) in.mask.set(clean, lp + j);   // Omega_l + U_{t_l}
      if (ts[j] > ts[l]) in.mask.set(masked, lp + j);   // Omega_l
    }
    in.mask.set(masked, masked);
  }
  return in;
}

}  // namespace d2::model
