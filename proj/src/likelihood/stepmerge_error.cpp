#include <algorithm>
#include <cmath>
#include <ostream>

#include "d2/error.hpp"
#include "d2/likelihood.hpp"
#include "d2/parallel.hpp"

namespace d2::likelihood {

namespace dm = d2::diffmath;

std::vector<DNEstimate> estimate_DN_sweep(const model::ModelParams& params,
                                          const PromptSampler& prompts,
                                          const decoding::ScheduleSpec& spec, Generator generator,
                                          std::span<const int> ns, int n_samples, Rng& rng) {
  if (n_samples < 1) throw ConfigError("D_N estimate needs at least one sample");
  for (int n : ns) make_segments(spec.steps, n, false);
  const std::uint64_t base = rng.next();
  const std::size_t S = static_cast<std::size_t>(n_samples);
  std::vector<std::vector<double>> gaps(ns.size(), std::vector<double>(S));

  // Prompts are drawn serially so the prompt sampler need not be thread-safe.
  std::vector<std::vector<int>> prompt_list(S);
  for (std::size_t i = 0; i < S; ++i) {
    Rng pr = Rng::stream({base, i, 0});
    prompt_list[i] = prompts(pr);
  }

  parallel_for(S, [&](std::size_t ui) {
    Rng r = Rng::stream({base, ui, 1});
    const auto schedule = spec.draw(r);
    const auto traj = decoding::sample(params, prompt_list[ui], schedule, generator, 1.0, r);
    const double full = traj_loglik_full(params, traj).total;
    for (std::size_t j = 0; j < ns.size(); ++j)
      gaps[j][ui] = full - traj_loglik_stepmerge(params, traj, ns[j]).total;
  });

  std::vector<DNEstimate> out;
  for (std::size_t j = 0; j < ns.size(); ++j) {
    DNEstimate e;
    e.n = ns[j];
    e.samples = n_samples;
    e.per_sample = std::move(gaps[j]);
    double sum = 0.0;
    for (double g : e.per_sample) sum += g;
    e.mean = sum / static_cast<double>(S);
    if (S > 1) {
      double ss = 0.0;
      for (double g : e.per_sample) ss += (g - e.mean) * (g - e.mean);
      e.std_error = std::sqrt(ss / static_cast<double>(S - 1) / static_cast<double>(S));
    }
    out.push_back(std::move(e));
  }
  return out;
}

DNEstimate estimate_DN(const model::ModelParams& params, const PromptSampler& prompts,
                       const decoding::ScheduleSpec& spec, Generator generator, int n,
                       int n_samples, Rng& rng) {
  const int ns[] = {n};
  return estimate_DN_sweep(params, prompts, spec, generator, ns, n_samples, rng).front();
}

namespace {

dm::Array step_logprobs(const model::ModelParams& params, const Trajectory& traj,
                        std::span<const int> ts, int step) {
  const auto ctx = context_tokens(traj.prompt, traj.tokens, ts, step, params.config.mask_id());
  const auto mask = decoding::step_mask(traj.schedule, traj.generator, step, traj.prompt_length());
  dm::Tape tape(dm::Tape::Mode::no_grad);
  const auto m = model::bind(tape, params);
  const auto logits = model::forward(tape, m, ctx, model::sequential_positions(ctx.size()), mask);
  return tape.array(dm::log_softmax_rows(tape, logits));
}

}  // namespace

double block_sensitivity(const model::ModelParams& params, std::span<const Trajectory> trajs,
                         int n) {
  double eps = 0.0;
  for (const auto& traj : trajs) {
    const auto segs = make_segments(traj.steps(), n, false);
    const auto ts = traj.decode_steps();
    const auto lp = static_cast<std::size_t>(traj.prompt_length());
    for (const Segment seg : segs) {
      if (seg.hi - seg.lo < 2) continue;
      const dm::Array boundary = step_logprobs(params, traj, ts, seg.hi - 1);
      for (int t = seg.lo; t < seg.hi - 1; ++t) {
        const dm::Array inner = step_logprobs(params, traj, ts, t);
        for (int l = 0; l < traj.length(); ++l) {
          if (ts[static_cast<std::size_t>(l)] > t) continue;
          const std::size_t row = lp + static_cast<std::size_t>(l);
          for (std::size_t v = 0; v < inner.cols(); ++v)
            eps = std::max(eps, inner(row, v) - boundary(row, v));
        }
      }
    }
  }
  return eps;
}

std::string to_string(EstimationMode m) {
  return m == EstimationMode::exact ? "exact" : "monte_carlo";
}

double stepmerge_kl_bound(int length, int steps, int n, double eps_block) {
  if (length < 0 || steps < 1 || n < 1) throw ConfigError("bound needs L >= 0, T >= 1, N >= 1");
  const double L = static_cast<double>(length);
  return L * std::log(static_cast<double>(steps) / n + 1.0) + L * eps_block;
}

BoundReport make_bound_report(int length, int steps, int n, double dn, double dn_stderr,
                              EstimationMode mode, int samples, double eps_block,
                              EstimationMode eps_mode) {
  BoundReport r;
  r.n = n;
  r.steps = steps;
  r.length = length;
  r.dn = dn;
  r.dn_stderr = dn_stderr;
  r.mode = mode;
  r.samples = samples;
  r.eps_block = eps_block;
  r.eps_mode = eps_mode;
  r.bound = stepmerge_kl_bound(length, steps, n, eps_block);
  r.holds = dn <= r.bound;
  return r;
}

void write_dn_sweep_csv(std::ostream& os, std::span<const BoundReport> rows) {
  const auto old = os.precision(10);
  os << "N,D_N,stderr,eps_block,bound,holds\n";
  for (const auto& r : rows) {
    os << r.n << ',' << r.dn << ',' << r.dn_stderr << ',' << r.eps_block << ',' << r.bound << ','
       << (r.holds ? "true" : "false") << '\n';
  }
  os.precision(old);
}

}  // namespace d2::likelihood
