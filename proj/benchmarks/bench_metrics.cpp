#include <benchmark/benchmark.h>

#include <random>

#include "promptlens/metrics/cosine.hpp"
#include "promptlens/metrics/metric_suite.hpp"

namespace {

using namespace promptlens;

Image noise(std::uint64_t seed, int size) {
  std::mt19937_64 rng(seed);
  Image img(size, size);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

void image_metric(benchmark::State& state, MetricId metric) {
  MetricSuite suite;
  const int size = static_cast<int>(state.range(0));
  const Image a = noise(1, size), b = noise(2, size);
  suite.image_distance(a, b, metric);  // load weights outside the timed loop
  for (auto _ : state) benchmark::DoNotOptimize(suite.image_distance(a, b, metric));
  state.SetItemsProcessed(state.iterations());
}

void BM_Lpips(benchmark::State& state) { image_metric(state, MetricId::kLpips); }
void BM_Vgg(benchmark::State& state) { image_metric(state, MetricId::kVggPerceptual); }
void BM_WatsonDft(benchmark::State& state) { image_metric(state, MetricId::kWatsonDft); }
BENCHMARK(BM_Lpips)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Vgg)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WatsonDft)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ClipFlatCosine(benchmark::State& state) {
  MetricSuite suite;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        suite.text_similarity("A cat", "A cat, in the style of Claude Monet", MetricId::kClipFlatCosine));
  }
}
BENCHMARK(BM_ClipFlatCosine);

void BM_Cosine(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> u(static_cast<std::size_t>(state.range(0))), v(u.size());
  for (auto& x : u) x = g(rng);
  for (auto& x : v) x = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(cosine_similarity(std::span<const double>(u), std::span<const double>(v)));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(2 * u.size() * sizeof(double)));
}
BENCHMARK(BM_Cosine)->Arg(384)->Arg(77 * 768);

}  // namespace

BENCHMARK_MAIN();
