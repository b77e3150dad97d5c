#include <benchmark/benchmark.h>

#include "promptlens/hash.hpp"
#include "promptlens/synthetic_backend.hpp"

namespace {

using namespace promptlens;

void BM_SyntheticGenerate(benchmark::State& state) {
  SyntheticBackend backend;
  GenerationSpec spec;
  spec.width = spec.height = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    spec.seed = seed++;
    benchmark::DoNotOptimize(backend.generate(spec, "A cat, minimalist, in the style of Claude Monet"));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_SyntheticGenerate)->Arg(64)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_ContentHash(benchmark::State& state) {
  SyntheticBackend backend;
  GenerationSpec spec;
  spec.width = spec.height = 512;
  const Image img = backend.generate(spec, "A cat");
  for (auto _ : state) benchmark::DoNotOptimize(content_hash(img));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(img.rgb.size()));
}
BENCHMARK(BM_ContentHash);

void BM_Philox(benchmark::State& state) {
  CounterRng rng(42, 7);
  for (auto _ : state) benchmark::DoNotOptimize(rng.next_u32());
}
BENCHMARK(BM_Philox);

}  // namespace
