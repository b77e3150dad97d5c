#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "promptlens/analysis.hpp"
#include "promptlens/error.hpp"
#include "promptlens/experiment.hpp"
#include "support.hpp"

using namespace promptlens;
using testing_support::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no promptlens::Error thrown";
  return ErrorCode::kIoError;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig small_config(const std::filesystem::path& dir) {
  ExperimentConfig cfg;
  cfg.name = "small";
  cfg.base_prompts = {"A cat", "A house"};
  cfg.seeds = {3, 4};
  cfg.repetitions = {1, 2};
  cfg.lexicons = {{ModifierCategory::kDescriptor, "builtin:descriptor", 3},
                  {ModifierCategory::kArtist, "builtin:artist", 2}};
  cfg.generation.width = 32;
  cfg.generation.height = 32;
  cfg.output_dir = dir / "out";
  cfg.cache_dir = dir / "cache";
  cfg.workers = 2;
  return cfg;
}

std::vector<PairObservation> sorted(std::vector<PairObservation> v) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.run_id < b.run_id; });
  return v;
}

// Synthetic backend that goes down after a fixed number of calls.
class FailingAfter : public DiffusionBackend {
 public:
  FailingAfter(SyntheticEffectProfile profile, int budget) : inner_(std::move(profile)), budget_(budget) {}
  std::string id() const override { return "synthetic"; }
  std::optional<std::string> pinned_model_id() const override { return inner_.pinned_model_id(); }
  Image generate(const GenerationSpec& spec, const std::string& prompt) override {
    if (budget_.fetch_sub(1) <= 0) throw Error(ErrorCode::kBackendUnavailable, "connection refused");
    return inner_.generate(spec, prompt);
  }

 private:
  SyntheticBackend inner_;
  std::atomic<int> budget_;
};

}  // namespace

TEST(Plan, HandCountedExamples) {
  ExperimentConfig cfg;
  cfg.base_prompts = {"A cat"};
  cfg.seeds = {0};
  cfg.lexicons = {{ModifierCategory::kNoun, "builtin:noun", 5}};
  const auto m = plan_runs(cfg);
  EXPECT_EQ(m.planned_count, 6u);
  EXPECT_EQ(m.runs.size(), 6u);
  EXPECT_EQ(std::count_if(m.runs.begin(), m.runs.end(), [](const auto& r) { return !r.is_base(); }), 5);

  cfg.base_prompts = {"A cat", "A dog", "A tree"};
  cfg.seeds = {0, 1};
  cfg.repetitions = {1, 2, 3, 5};
  cfg.lexicons = {{ModifierCategory::kDescriptor, "builtin:descriptor", 10},
                  {ModifierCategory::kNoun, "builtin:noun", 10}};
  EXPECT_EQ(plan_runs(cfg).planned_count, 486u);
  EXPECT_EQ(planned_generation_count(3, 2, 20, 4), 486u);
}

TEST(Plan, CategorySweepIs96) {
  const auto m = plan_runs(preset("category_sweep"));
  EXPECT_EQ(m.planned_count, 96u);
  EXPECT_EQ(m.count(RunStatus::kPending), 96u);
}

TEST(Plan, BasesSharedAndOrdered) {
  TempDir dir;
  const auto m = plan_runs(small_config(dir.path()));
  EXPECT_TRUE(std::is_sorted(m.runs.begin(), m.runs.end(),
                             [](const auto& a, const auto& b) { return a.run_id < b.run_id; }));
  for (const auto& r : m.runs) {
    if (r.is_base()) {
      EXPECT_TRUE(r.base_run_id.empty());
      continue;
    }
    const auto base = std::find_if(m.runs.begin(), m.runs.end(), [&](const auto& b) { return b.run_id == r.base_run_id; });
    ASSERT_NE(base, m.runs.end());
    EXPECT_TRUE(base->is_base());
    EXPECT_EQ(base->seed, r.seed);
    EXPECT_EQ(base->variant.base, r.variant.base);
  }
  EXPECT_EQ(plan_runs(small_config(dir.path())).to_json()["runs"], m.to_json()["runs"]);
}

TEST(Plan, CountFormulaMatchesEnumeration) {
  std::mt19937_64 rng(8);
  const std::vector<std::string> words = {"A cat", "A dog", "A tree", "A boat", "A lamp"};
  for (int trial = 0; trial < 40; ++trial) {
    ExperimentConfig cfg;
    const std::size_t bases = 1 + rng() % 4, seeds = 1 + rng() % 3;
    cfg.base_prompts.assign(words.begin(), words.begin() + static_cast<long>(bases));
    for (std::size_t s = 0; s < seeds; ++s) cfg.seeds.push_back(rng());
    cfg.repetitions.clear();
    for (int r : {1, 2, 3, 5}) {
      if (rng() % 2 || cfg.repetitions.empty()) cfg.repetitions.push_back(r);
    }
    std::size_t lexicon_total = 0;
    for (auto c : kAllCategories) {
      if (rng() % 2) continue;
      const std::size_t limit = 1 + rng() % 4;
      cfg.lexicons.push_back({c, "builtin:" + std::string(to_string(c)), limit});
      lexicon_total += std::min(limit, builtin_lexicon(c).size());
    }
    // Oracle: walk the matrix directly.
    std::size_t enumerated = 0;
    for (std::size_t b = 0; b < bases; ++b)
      for (std::size_t s = 0; s < seeds; ++s) enumerated += 1 + lexicon_total * cfg.repetitions.size();
    const auto m = plan_runs(cfg);
    EXPECT_EQ(m.planned_count, enumerated);
    EXPECT_EQ(m.runs.size(), enumerated);
    EXPECT_EQ(planned_generation_count(bases, seeds, lexicon_total, cfg.repetitions.size()), enumerated);
  }
}

TEST(Config, ValidationErrors) {
  ExperimentConfig cfg;
  cfg.base_prompts = {"A cat"};
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::kInvalidConfig);
  cfg.seeds = {1};
  cfg.base_prompts.clear();
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::kInvalidConfig);
  cfg.base_prompts = {"A cat"};
  cfg.lexicons = {{ModifierCategory::kNoun, "/nonexistent/noun.txt", std::nullopt}};
  EXPECT_ANY_THROW(plan_runs(cfg));
}

TEST(Config, TomlRoundTrip) {
  TempDir dir;
  {
    std::ofstream(dir.path() / "mine.txt") << "category: noun\na castle\na dragon\n";
  }
  const auto cfg = ExperimentConfig::from_toml(R"(
name = "toml-test"
[prompts]
bases = ["A cat", "A dog"]
seeds = [7, 8]
repetitions = [1, 3]
[lexicons]
noun = "mine.txt"
artist = { path = "builtin:artist", limit = 2 }
[templates]
artist = "style_of"
[generation]
width = 64
height = 48
steps = 20
[metrics]
use = ["lpips", "clip_flat_cosine"]
[output]
dir = "results"
workers = 3
[synthetic]
noun = 0.9
jitter = 0.0
overrides = { "a dragon" = 0.2 }
)",
                                               dir.path());
  EXPECT_EQ(cfg.name, "toml-test");
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{7, 8}));
  EXPECT_EQ(cfg.repetitions, (std::vector<int>{1, 3}));
  EXPECT_EQ(cfg.generation.width, 64);
  EXPECT_EQ(cfg.generation.steps, 20);
  EXPECT_EQ(cfg.metrics, (std::vector<MetricId>{MetricId::kLpips, MetricId::kClipFlatCosine}));
  EXPECT_EQ(cfg.output_dir, dir.path() / "results");
  EXPECT_EQ(cfg.workers, 3);
  EXPECT_EQ(cfg.synthetic_weights.at(ModifierCategory::kNoun), 0.9);
  EXPECT_EQ(cfg.synthetic_overrides.at("a dragon"), 0.2);
  const auto m = plan_runs(cfg);
  EXPECT_EQ(m.planned_count, 2u * 2u * (1u + 4u * 2u));
  for (const auto& r : m.runs) {
    if (!r.is_base() && r.variant.modifier->category == ModifierCategory::kArtist && r.variant.repetition_count == 1) {
      EXPECT_NE(r.variant.composed.find(" in the style of "), std::string::npos) << r.variant.composed;
    }
  }
  EXPECT_EQ(ExperimentConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());

  EXPECT_EQ(code_of([] { ExperimentConfig::from_toml("[prompts\nbases = 1"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { ExperimentConfig::from_toml("[prompts]\nbases = [\"A\"]\nseeds = [1]\n[metrics]\nuse = [\"psnr\"]"); }),
            ErrorCode::kInvalidConfig);
}

TEST(Presets, Contents) {
  for (const auto& name : preset_names()) EXPECT_NO_THROW(plan_runs(preset(name))) << name;
  const auto artist = plan_runs(preset("artist_sweep"));
  for (const auto& r : artist.runs) {
    EXPECT_EQ(r.variant.base, "A portrait of a beautiful woman");
    if (r.is_base()) continue;
    const std::string tail = "in the style of " + r.variant.modifier->text;
    ASSERT_GE(r.variant.composed.size(), tail.size());
    EXPECT_EQ(r.variant.composed.substr(r.variant.composed.size() - tail.size()), tail);
  }
  EXPECT_EQ(preset("repetition_sweep").repetitions, (std::vector<int>{1, 2, 3, 5}));
  EXPECT_EQ(code_of([] { preset("bogus"); }), ErrorCode::kUnknownPreset);
}

TEST(Manifest, StatusesOnlyAdvance) {
  auto m = plan_runs(preset("artist_sweep"));
  m.advance(0, RunStatus::kDone, "abc");
  EXPECT_EQ(m.runs[0].content_hash, "abc");
  EXPECT_EQ(code_of([&] { m.advance(0, RunStatus::kPending); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { m.advance(0, RunStatus::kFailed, {}, "x"); }), ErrorCode::kInvalidArgument);
  m.advance(1, RunStatus::kFailed, {}, "backend down");
  m.advance(1, RunStatus::kDone, "def");
  EXPECT_TRUE(m.runs[1].error.empty() || m.runs[1].status == RunStatus::kDone);
  EXPECT_EQ(m.count(RunStatus::kDone), 2u);

  TempDir dir;
  m.save(dir.path() / "manifest.json");
  const auto back = RunManifest::load(dir.path() / "manifest.json");
  EXPECT_EQ(back.to_json(), m.to_json());
}

TEST(Store, AppendRejectsDuplicatesAndRepairsTornTail) {
  TempDir dir;
  const auto path = dir.path() / "obs.jsonl";
  PairObservation a;
  a.run_id = "r001";
  a.scores[MetricId::kLpips] = MetricScore{MetricId::kLpips, 0.25, Orientation::kDistance};
  PairObservation b = a;
  b.run_id = "r002";
  {
    ResultStore store(path);
    store.append(a);
    EXPECT_EQ(code_of([&] { store.append(a); }), ErrorCode::kDuplicateEntry);
    store.append(b);
  }
  const std::string clean = slurp(path);
  {
    std::ofstream(path, std::ios::app) << "{\"run_id\":\"r003\",\"sco";
  }
  const std::string torn = slurp(path);
  EXPECT_EQ(ResultStore::read(path).size(), 2u);
  EXPECT_EQ(slurp(path), torn);

  ResultStore reopened(path);
  EXPECT_EQ(reopened.observations().size(), 2u);
  EXPECT_GT(reopened.repaired_bytes(), 0u);
  EXPECT_EQ(slurp(path), clean);
  EXPECT_TRUE(reopened.contains("r002"));
  EXPECT_EQ(reopened.observations()[0], a);
  EXPECT_EQ(reopened.select(ModifierCategory::kDescriptor, MetricId::kLpips).size(), 2u);
}

TEST(Execute, CompletesAndReferencesCachedImages) {
  TempDir dir;
  const auto cfg = small_config(dir.path());
  const auto summary = run_experiment(cfg);
  EXPECT_EQ(summary.failed, 0u);
  const RunPaths paths{cfg.resolved_output_dir()};
  const auto manifest = RunManifest::load(paths.manifest());
  EXPECT_EQ(manifest.count(RunStatus::kDone), manifest.planned_count);
  const auto obs = ResultStore::read(paths.store());
  EXPECT_EQ(obs.size(), manifest.planned_count - 4);
  ImageCache cache(cfg.resolved_cache_dir());
  for (const auto& o : obs) {
    EXPECT_TRUE(cache.contains_image(o.base_hash));
    EXPECT_TRUE(cache.contains_image(o.probe_hash));
    EXPECT_FALSE(o.partial());
    EXPECT_EQ(o.scores.size(), kAllMetrics.size());
  }
}

TEST(Execute, WarmCacheRerunIsFreeAndByteIdentical) {
  TempDir dir;
  const auto cfg = small_config(dir.path());
  const auto first = run_experiment(cfg);
  EXPECT_GT(first.backend_invocations, 0u);
  const auto store_bytes = slurp(RunPaths{cfg.resolved_output_dir()}.store());
  const auto second = run_experiment(cfg);
  EXPECT_EQ(second.backend_invocations, 0u);
  EXPECT_EQ(second.executed, 0u);
  EXPECT_EQ(slurp(RunPaths{cfg.resolved_output_dir()}.store()), store_bytes);

  // Fresh output dir against the warm cache: still no backend work.
  auto again = cfg;
  again.output_dir = dir.path() / "out2";
  const auto third = run_experiment(again);
  EXPECT_EQ(third.backend_invocations, 0u);
  EXPECT_EQ(slurp(RunPaths{again.resolved_output_dir()}.store()), store_bytes);
}

TEST(Execute, ResultIndependentOfWorkerCount) {
  TempDir dir;
  auto one = small_config(dir.path());
  one.workers = 1;
  one.output_dir = dir.path() / "w1";
  one.cache_dir = dir.path() / "c1";
  auto four = one;
  four.workers = 4;
  four.output_dir = dir.path() / "w4";
  four.cache_dir = dir.path() / "c4";
  run_experiment(one);
  run_experiment(four);
  EXPECT_EQ(sorted(ResultStore::read(RunPaths{one.resolved_output_dir()}.store())),
            sorted(ResultStore::read(RunPaths{four.resolved_output_dir()}.store())));
}

TEST(Execute, StopThenResumeEqualsUninterrupted) {
  TempDir dir;
  auto full = small_config(dir.path());
  full.output_dir = dir.path() / "full";
  run_experiment(full);

  auto resumed = small_config(dir.path());
  resumed.output_dir = dir.path() / "resumed";
  resumed.cache_dir = dir.path() / "cache2";
  std::stop_source stop;
  ExecuteOptions opts;
  opts.workers = 1;
  opts.stop = stop.get_token();
  opts.on_progress = [&](const PlannedRun&, std::size_t finished, std::size_t total) {
    if (finished * 2 >= total) stop.request_stop();
  };
  const auto partial = run_experiment(resumed, opts);
  EXPECT_TRUE(partial.stopped);
  const auto mid = ResultStore::read(RunPaths{resumed.resolved_output_dir()}.store());
  EXPECT_GT(mid.size(), 0u);
  EXPECT_LT(mid.size(), ResultStore::read(RunPaths{full.resolved_output_dir()}.store()).size());

  const auto rest = run_experiment(resumed);
  EXPECT_FALSE(rest.stopped);
  EXPECT_GT(rest.skipped, 0u);
  const auto final_obs = ResultStore::read(RunPaths{resumed.resolved_output_dir()}.store());
  for (std::size_t i = 0; i < mid.size(); ++i) EXPECT_EQ(final_obs[i], mid[i]);
  EXPECT_EQ(sorted(final_obs), sorted(ResultStore::read(RunPaths{full.resolved_output_dir()}.store())));
}

TEST(Execute, BackendDownMarksRunsFailedAndRetrySucceeds) {
  TempDir dir;
  auto cfg = small_config(dir.path());
  cfg.workers = 1;
  auto manifest = plan_runs(cfg);
  auto runtime = make_runtime(cfg);
  auto generator = std::make_shared<Generator>(runtime.cache, runtime.tokenizer);
  generator->register_backend(std::make_shared<FailingAfter>(cfg.synthetic_profile(), 10));
  runtime.generator = generator;
  std::filesystem::create_directories(cfg.resolved_output_dir());
  ResultStore store(RunPaths{cfg.resolved_output_dir()}.store());
  const auto summary = execute(manifest, cfg, runtime, store);
  EXPECT_GT(summary.failed, 0u);
  EXPECT_GT(summary.executed, 0u);
  EXPECT_EQ(manifest.count(RunStatus::kFailed), summary.failed);
  EXPECT_EQ(store.observations().size(),
            static_cast<std::size_t>(std::count_if(manifest.runs.begin(), manifest.runs.end(), [](const auto& r) {
              return !r.is_base() && r.status == RunStatus::kDone;
            })));
  for (const auto& r : manifest.runs) {
    if (r.status != RunStatus::kFailed) continue;
    EXPECT_FALSE(r.error.empty());
    if (!r.is_base()) {
      EXPECT_FALSE(store.contains(r.run_id));
    }
  }

  // Backend restored: failed runs are retried and the matrix completes.
  auto healthy = make_runtime(cfg);
  const auto retry = execute(manifest, cfg, healthy, store);
  EXPECT_EQ(retry.failed, 0u);
  EXPECT_EQ(manifest.count(RunStatus::kDone), manifest.planned_count);
  EXPECT_EQ(store.observations().size(), manifest.planned_count - 4);
}

TEST(Execute, CategoryDirectionOnSyntheticBackend) {
  TempDir dir;
  auto cfg = preset("category_sweep");
  cfg.generation.width = cfg.generation.height = 48;
  cfg.metrics = {MetricId::kLpips};
  cfg.output_dir = dir.path() / "out";
  cfg.cache_dir = dir.path() / "cache";
  run_experiment(cfg);
  const auto agg = aggregate_by_category(ResultStore::read(RunPaths{cfg.output_dir}.store()), cfg.metrics);
  std::map<ModifierCategory, double> mean;
  for (const auto& c : agg.categories) mean[c.category] = c.metrics.at(MetricId::kLpips).mean;
  EXPECT_GT(mean.at(ModifierCategory::kDescriptor), mean.at(ModifierCategory::kNoun));
  EXPECT_GT(mean.at(ModifierCategory::kDescriptor), mean.at(ModifierCategory::kArtist));
}

// Plant a text-linked effect: each modifier's synthetic weight falls as the
// CLIP similarity of its prompt pair rises. CLIP should then track image
// similarity more closely than the sentence encoder.
TEST(Execute, PlantedClipLinkedEffectFavoursClip) {
  TempDir dir;
  ExperimentConfig cfg;
  cfg.name = "planted";
  cfg.base_prompts = {"A cat"};
  cfg.seeds = {0};
  for (auto c : {ModifierCategory::kDescriptor, ModifierCategory::kNoun, ModifierCategory::kArtist})
    cfg.lexicons.push_back({c, "builtin:" + std::string(to_string(c)), 10});
  cfg.generation.width = cfg.generation.height = 48;
  cfg.metrics = {MetricId::kLpips, MetricId::kClipFlatCosine, MetricId::kSbertCosine};
  cfg.output_dir = dir.path() / "out";
  cfg.cache_dir = dir.path() / "cache";
  cfg.synthetic_jitter = 0.0;

  MetricSuite suite(cfg.metric_config);
  const auto plan = plan_runs(cfg);
  std::vector<std::pair<std::string, double>> clip;
  for (const auto& r : plan.runs) {
    if (r.is_base()) continue;
    clip.emplace_back(r.variant.modifier->text,
                      suite.text_similarity(r.variant.base, r.variant.composed, MetricId::kClipFlatCosine).value);
  }
  const auto [lo, hi] = std::minmax_element(clip.begin(), clip.end(),
                                            [](const auto& a, const auto& b) { return a.second < b.second; });
  for (const auto& [text, c] : clip)
    cfg.synthetic_overrides[text] = 0.05 + 0.85 * (hi->second - c) / (hi->second - lo->second);

  run_experiment(cfg);
  const auto obs = ResultStore::read(RunPaths{cfg.output_dir}.store());
  const auto with_clip = correlate(obs, MetricId::kClipFlatCosine, MetricId::kLpips);
  const auto with_sbert = correlate(obs, MetricId::kSbertCosine, MetricId::kLpips);
  EXPECT_GT(with_clip.pearson_r, 0.5);
  EXPECT_EQ(compare_correlations(with_clip, with_sbert).verdict, CorrelationComparison::Verdict::kFirstStronger)
      << with_clip.pearson_r << " vs " << with_sbert.pearson_r;
}
