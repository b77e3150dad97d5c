#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptlens/generator.hpp"
#include "promptlens/image.hpp"
#include "promptlens/lexicon.hpp"
#include "promptlens/metrics/metric_suite.hpp"
#include "promptlens/observation.hpp"
#include "promptlens/synthetic_backend.hpp"

namespace promptlens {

std::string_view toolkit_version();

struct LexiconRef {
  ModifierCategory category = ModifierCategory::kDescriptor;
  std::string source;  // file path or builtin:<category>
  std::optional<std::size_t> limit;
};

/// One experiment matrix: bases x seeds x (base + lexicon entries x
/// repetitions).
///
/// TOML layout (every key optional unless noted):
///
///   name = "my-sweep"
///   [prompts]     bases = [...] (required), seeds = [...] (required),
///                 repetitions = [1]
///   [lexicons]    <category> = "path" | { path = "...", limit = 5 }
///   [templates]   <category> = "comma_suffix" | "style_of" | "raw_suffix"
///                 | "<pattern with {base} and {modifier}>"
///   [generation]  backend, model, scheduler, steps, guidance_scale, width,
///                 height, tokenizer = "whitespace" | "adapter", adapter_url
///   [metrics]     use = [...], lpips_weights, lpips_digest, vgg_weights,
///                 vgg_digest, watson_config, text_encoders = "hashed" | "http"
///   [output]      dir, cache_dir, workers
///   [synthetic]   <category> = weight, jitter, unknown_weight,
///                 lighting_low, lighting_high, overrides = { text = weight }
struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::string> base_prompts;
  std::vector<LexiconRef> lexicons;
  std::vector<std::uint64_t> seeds;
  std::vector<int> repetitions{1};
  GenerationSpec generation;  // seed is taken from `seeds`
  TemplateMap templates = default_template_map();
  std::vector<MetricId> metrics{kAllMetrics.begin(), kAllMetrics.end()};
  MetricSuiteConfig metric_config;
  std::string tokenizer = "whitespace";
  std::string adapter_url;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> cache_dir;
  int workers = 0;  // 0: hardware concurrency
  std::map<ModifierCategory, double> synthetic_weights;
  std::optional<double> synthetic_jitter;
  std::optional<double> synthetic_unknown_weight;
  std::optional<double> synthetic_lighting_low;
  std::optional<double> synthetic_lighting_high;
  std::map<std::string, double> synthetic_overrides;

  /// Throws kInvalidConfig.
  void validate() const;

  /// Relative paths resolve against `base_dir`. Throws kInvalidConfig.
  static ExperimentConfig from_toml(std::string_view text, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  std::filesystem::path resolved_output_dir() const;
  /// config.cache_dir, then PROMPTLENS_CACHE_DIR, then <output_dir>/cache.
  std::filesystem::path resolved_cache_dir() const;
  std::vector<Lexicon> load_lexicons() const;
  SyntheticEffectProfile synthetic_profile() const;
};

/// Desk-scale configurations for the built-in experiments. Throws
/// kUnknownPreset.
ExperimentConfig preset(std::string_view name);
std::vector<std::string> preset_names();

enum class RunStatus { kPending, kDone, kFailed };
std::string_view to_string(RunStatus status);

struct PlannedRun {
  std::string run_id;  // "r" + zero-padded plan index; sorts in plan order
  std::size_t index = 0;
  std::size_t base_index = 0;
  std::uint64_t seed = 0;
  PromptVariant variant;
  std::string base_run_id;  // empty for base runs
  RunStatus status = RunStatus::kPending;
  std::string content_hash;
  std::string error;
  std::string updated_at;

  bool is_base() const noexcept { return variant.is_base(); }
};

/// Systematic record of a run matrix and the progress through it.
struct RunManifest {
  std::string name;
  nlohmann::json config;
  std::string toolkit_version;
  std::string backend_id;
  std::string model_id;
  nlohmann::json provenance = nlohmann::json::object();
  std::size_t planned_count = 0;
  std::vector<PlannedRun> runs;
  std::string created_at;
  std::string updated_at;

  std::size_t count(RunStatus status) const;
  /// Statuses only move forward, except that a failed run may succeed on a
  /// later attempt. Throws kInvalidArgument otherwise.
  void advance(std::size_t index, RunStatus status, std::string content_hash = {}, std::string error = {});

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

/// |bases| x |seeds| x (1 + sum(lexicon sizes) x |repetitions|)
std::size_t planned_generation_count(std::size_t bases, std::size_t seeds, std::size_t lexicon_total,
                                     std::size_t repetitions);

/// Deterministic enumeration: for each base, each seed, the base run followed
/// by every variant. Throws on invalid config, missing lexicons or over-budget
/// prompts.
RunManifest plan_runs(const ExperimentConfig& config, const Tokenizer& tokenizer = default_tokenizer());

/// Append-only JSON-lines file of PairObservation records, one writer at a
/// time. Opening repairs a torn final line left by a killed writer.
class ResultStore {
 public:
  explicit ResultStore(std::filesystem::path path);

  /// Read-only: ignores (does not repair) a torn final line.
  static std::vector<PairObservation> read(const std::filesystem::path& path);

  void append(const PairObservation& observation);
  const std::vector<PairObservation>& observations() const noexcept { return observations_; }
  bool contains(const std::string& run_id) const { return run_ids_.contains(run_id); }
  std::vector<const PairObservation*> select(ModifierCategory category, MetricId metric) const;
  const std::filesystem::path& path() const noexcept { return path_; }
  /// Bytes dropped from a torn tail when the store was opened.
  std::size_t repaired_bytes() const noexcept { return repaired_bytes_; }

 private:
  std::filesystem::path path_;
  std::vector<PairObservation> observations_;
  std::set<std::string> run_ids_;
  std::size_t repaired_bytes_ = 0;
};

/// Generator, metrics and tokenizer built from a config.
struct Runtime {
  std::shared_ptr<ImageCache> cache;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::shared_ptr<Generator> generator;
  std::shared_ptr<MetricSuite> metrics;
};

Runtime make_runtime(const ExperimentConfig& config);

struct ExecuteOptions {
  int workers = 0;  // 0: config.workers, then hardware concurrency
  std::stop_token stop;
  std::function<void(const PlannedRun&, std::size_t finished, std::size_t total)> on_progress;
  std::size_t manifest_flush_every = 16;
};

struct ExecuteSummary {
  std::size_t executed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  bool stopped = false;
  std::uint64_t backend_invocations = 0;
  std::uint64_t cache_hits = 0;
};

/// Runs every pending run, appending one observation per finished probe in
/// plan order. Runs already in the store are skipped, so re-invocation
/// resumes. Per-run failures are recorded in the manifest; only store or
/// cache I/O errors abort.
ExecuteSummary execute(RunManifest& manifest, const ExperimentConfig& config, Runtime& runtime, ResultStore& store,
                       const ExecuteOptions& options = {});

/// Paths inside an experiment directory.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path store() const { return dir / "observations.jsonl"; }
  std::filesystem::path config() const { return dir / "config.json"; }
};

/// plan (or reload the manifest when the directory already holds the same
/// config), build the runtime and execute.
ExecuteSummary run_experiment(const ExperimentConfig& config, const ExecuteOptions& options = {});

}  // namespace promptlens
