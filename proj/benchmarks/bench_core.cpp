#include <benchmark/benchmark.h>

#include <memory>

#include "ccverify/bab.hpp"
#include "ccverify/mpcc.hpp"
#include "ccverify/propagate.hpp"
#include "ccverify/toy.hpp"

using namespace ccv;

namespace {

// Random instance with the given hidden width, radius 0.2.
VerificationInstance instance(int width, std::uint64_t seed) {
  auto net = std::make_shared<const ReluNetwork>(toy::random_network({2, width, width, 2}, seed));
  return toy::random_instance(net, seed, 0.2);
}

void BM_CrownBounds(benchmark::State& state) {
  const auto inst = instance(static_cast<int>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(crown_bounds(inst));
}
BENCHMARK(BM_CrownBounds)->Arg(8)->Arg(16)->Arg(32);

void BM_OptimizeRelaxation(benchmark::State& state) {
  const auto inst = instance(static_cast<int>(state.range(0)), 1);
  const auto root = crown_bounds(inst);
  for (auto _ : state) benchmark::DoNotOptimize(optimize_relaxation(inst, root, SplitSet{}));
}
BENCHMARK(BM_OptimizeRelaxation)->Arg(8)->Arg(16)->Arg(32);

void BM_MpccUpperBound(benchmark::State& state) {
  const auto inst = instance(static_cast<int>(state.range(0)), 1);
  const auto root = crown_bounds(inst);
  const auto problem = build_problem(inst, root, SplitSet{});
  for (auto _ : state) benchmark::DoNotOptimize(upper_bound(inst, problem));
}
BENCHMARK(BM_MpccUpperBound)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_VerifyTwoNeuron(benchmark::State& state) {
  const auto inst = toy::two_neuron_instance();
  for (auto _ : state) benchmark::DoNotOptimize(verify(inst));
}
BENCHMARK(BM_VerifyTwoNeuron)->Unit(benchmark::kMicrosecond);

void BM_VerifyRandom(benchmark::State& state) {
  const auto inst = instance(8, static_cast<std::uint64_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(verify(inst));
}
BENCHMARK(BM_VerifyRandom)->Arg(3)->Arg(11)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
