#include <benchmark/benchmark.h>

#include <random>

#include "promptlens/analysis.hpp"

namespace {

using namespace promptlens;

std::vector<double> mixture(std::size_t n) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> lo(0.50, 0.03), hi(0.75, 0.03);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i % 2 ? lo(rng) : hi(rng);
  return v;
}

void BM_DetectModes(benchmark::State& state) {
  const auto values = mixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(detect_modes(values));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DetectModes)->RangeMultiplier(4)->Range(64, 16384)->Complexity();

void BM_BuildDistribution(benchmark::State& state) {
  const auto values = mixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(build_distribution(values));
}
BENCHMARK(BM_BuildDistribution)->RangeMultiplier(8)->Range(64, 32768);

void BM_Spearman(benchmark::State& state) {
  const auto x = mixture(static_cast<std::size_t>(state.range(0)));
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < x.size(); ++i) pts.emplace_back(x[i], x[(i * 7) % x.size()]);
  for (auto _ : state) benchmark::DoNotOptimize(correlate(pts, MetricId::kClipFlatCosine, MetricId::kLpips));
}
BENCHMARK(BM_Spearman)->RangeMultiplier(8)->Range(64, 32768);

}  // namespace
