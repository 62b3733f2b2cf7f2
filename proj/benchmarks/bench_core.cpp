#include <benchmark/benchmark.h>

#include "droplab/data.hpp"
#include "droplab/model.hpp"
#include "droplab/theory.hpp"
#include "droplab/trainer.hpp"

using namespace droplab;

namespace {

constexpr std::size_t kD = 20;

NetworkParams net(std::size_t m) {
  RngStream rng(1, streams::init);
  return init_network(rng, m, kD).params;
}

}  // namespace

static void BM_ForwardSub(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto p = net(m);
  RngStream rng(2, streams::masks);
  const auto mask = sample_mask(rng, m, 0.5);
  const Vector x = sample_unit_sphere(rng, kD);
  for (auto _ : state) benchmark::DoNotOptimize(forward_sub(p, mask, x));
}
BENCHMARK(BM_ForwardSub)->Arg(64)->Arg(1024)->Arg(4096);

static void BM_GradSub(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto p = net(m);
  RngStream rng(3, streams::masks);
  const auto mask = sample_mask(rng, m, 0.5);
  const Vector x = sample_unit_sphere(rng, kD);
  for (auto _ : state) benchmark::DoNotOptimize(grad_sub(p, mask, x));
}
BENCHMARK(BM_GradSub)->Arg(64)->Arg(1024)->Arg(4096);

static void BM_DropoutStep(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  auto p = net(m);
  const auto spec = make_halfspace_spec(kD, 0.5, 0.5);
  RngStream data(4, streams::data), masks(4, streams::masks);
  for (auto _ : state) {
    const Example ex = sample_halfspace_one(data, spec);
    const auto mask = sample_mask(masks, m, 0.5);
    p = dropout_step(p, ex, mask, 0.5, 10.0).params;
  }
}
BENCHMARK(BM_DropoutStep)->Arg(64)->Arg(1024)->Arg(4096);

static void BM_Projection(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto p = net(m);
  for (auto _ : state) {
    Matrix W = p.W;
    benchmark::DoNotOptimize(project_maxnorm_inplace(W, 4.0));
  }
}
BENCHMARK(BM_Projection)->Arg(1024)->Arg(4096);

static void BM_EvaluateRisks(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto p = net(m);
  const auto spec = make_halfspace_spec(kD, 0.5, 0.5);
  RngStream rng(5, streams::test_data);
  const auto test = sample_halfspace(rng, spec, 2000);
  RngStream mr(5, streams::masks);
  const auto mask = sample_mask(mr, m, 0.5);
  const DropoutMask* masks[] = {nullptr, &mask};
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_risks(p, masks, test));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 2000);
}
BENCHMARK(BM_EvaluateRisks)->Arg(64)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
