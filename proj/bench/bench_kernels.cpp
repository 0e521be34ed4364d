#include <benchmark/benchmark.h>

#include <vector>

#include "d2/kernels.hpp"
#include "d2/likelihood.hpp"
#include "d2/rng.hpp"
#include "d2/tasks.hpp"

namespace {

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  d2::Rng r(seed);
  std::vector<double> v(n);
  for (double& x : v) x = r.normal(0.0, 1.0);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 1), b = random_matrix(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      d2::kernels::matmul(a, b, c, n, n, n);
    else
      d2::kernels::matmul_serial(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] =
      benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Matmul<true>)->Name("matmul/openmp")->RangeMultiplier(2)->Range(32, 256);

template <bool Parallel>
void BM_MatmulTnAcc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 3), g = random_matrix(n * n, 4);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      d2::kernels::matmul_tn_acc(a, g, c, n, n, n);
    else
      d2::kernels::matmul_tn_acc_serial(a, g, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_MatmulTnAcc<false>)->Name("matmul_tn_acc/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulTnAcc<true>)->Name("matmul_tn_acc/openmp")->Arg(64)->Arg(256);

// Scoring one sorted-task trajectory with each estimator: T, N and 1 passes.
void BM_TrajLoglik(benchmark::State& state) {
  const auto task = d2::tasks::make_task("sorted");
  d2::model::ModelConfig c;
  c.vocab_size = task->vocab_size();
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.max_positions = 32;
  d2::Rng r(5);
  const auto p = d2::model::init_params(c, r);
  const auto prompt = task->sample_prompt(r);
  const d2::decoding::ScheduleSpec spec{8, 8, 1, d2::SelectionPolicy::random};
  const auto traj = d2::decoding::sample(p, prompt, spec.draw(r), d2::Generator::any_order, 1.0, r);
  const d2::likelihood::Estimator ests[] = {d2::likelihood::Estimator::full(),
                                            d2::likelihood::Estimator::stepmerge(2),
                                            d2::likelihood::Estimator::oneshot()};
  const auto& est = ests[state.range(0)];
  state.SetLabel(est.name());
  for (auto _ : state) benchmark::DoNotOptimize(d2::likelihood::traj_loglik(p, traj, est).total);
}
BENCHMARK(BM_TrajLoglik)->Name("traj_loglik")->DenseRange(0, 2);

}  // namespace

BENCHMARK_MAIN();
