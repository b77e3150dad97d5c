#include "promptlens/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <toml.hpp>

#include "promptlens/cache.hpp"
#include "promptlens/error.hpp"
#include "promptlens/http_adapter.hpp"

#ifndef PROMPTLENS_VERSION
#define PROMPTLENS_VERSION "0.0.0"
#endif

namespace promptlens {

namespace {

constexpr int kPresetSize = 128;

[[noreturn]] void invalid(const std::string& message) { throw Error(ErrorCode::kInvalidConfig, message); }

MetricId config_metric(std::string_view name) {
  try {
    return metric_from_string(name);
  } catch (const Error& e) {
    invalid(e.what());
  }
}

ModifierCategory config_category(std::string_view name) {
  try {
    return category_from_string(name);
  } catch (const Error& e) {
    invalid(e.what());
  }
}

std::string format_run_id(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "r" + digits;
}

PromptTemplate template_from_text(const std::string& text) {
  if (auto rule = parse_join_rule(text)) return PromptTemplate::for_rule(*rule);
  if (text.find("{base}") == std::string::npos || text.find("{modifier}") == std::string::npos) {
    invalid("template '" + text + "' must be a join rule or contain {base} and {modifier}");
  }
  const JoinRule rule = text.find(" in the style of ") != std::string::npos ? JoinRule::kStyleOf : JoinRule::kCommaSuffix;
  return {text, rule};
}

std::filesystem::path resolve_path(const std::filesystem::path& base_dir, const std::string& p) {
  if (p.starts_with("builtin:")) return p;
  std::filesystem::path path(p);
  if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
  return path;
}

std::string resolve_source(const std::filesystem::path& base_dir, const std::string& p) {
  return p.starts_with("builtin:") ? p : resolve_path(base_dir, p).string();
}

template <typename T>
std::optional<T> toml_value(const toml::node_view<const toml::node>& node, const std::string& key) {
  if (!node) return std::nullopt;
  if (auto v = node.template value<T>()) return v;
  invalid("config key '" + key + "' has the wrong type");
}

std::vector<std::string> toml_strings(const toml::node_view<const toml::node>& node, const std::string& key) {
  std::vector<std::string> out;
  if (!node) return out;
  const toml::array* arr = node.as_array();
  if (!arr) invalid("config key '" + key + "' must be an array");
  for (const auto& el : *arr) {
    auto v = el.value<std::string>();
    if (!v) invalid("config key '" + key + "' must hold strings");
    out.push_back(*v);
  }
  return out;
}

std::vector<std::int64_t> toml_ints(const toml::node_view<const toml::node>& node, const std::string& key) {
  std::vector<std::int64_t> out;
  if (!node) return out;
  const toml::array* arr = node.as_array();
  if (!arr) invalid("config key '" + key + "' must be an array");
  for (const auto& el : *arr) {
    auto v = el.value<std::int64_t>();
    if (!v || !el.is_integer()) invalid("config key '" + key + "' must hold integers");
    out.push_back(*v);
  }
  return out;
}

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

struct RunResult {
  std::size_t index = 0;
  RunStatus status = RunStatus::kFailed;
  std::string content_hash;
  std::string error;
  std::optional<PairObservation> observation;
};

}  // namespace

std::string_view toolkit_version() { return PROMPTLENS_VERSION; }

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  if (name.empty()) invalid("experiment name must not be empty");
  if (base_prompts.empty()) invalid("at least one base prompt is required");
  for (const auto& b : base_prompts) {
    if (b.find_first_not_of(" \t\r\n") == std::string::npos) invalid("base prompts must not be blank");
  }
  if (seeds.empty()) invalid("at least one seed is required");
  if (repetitions.empty()) invalid("repetitions must not be empty");
  for (std::size_t i = 0; i < repetitions.size(); ++i) {
    if (repetitions[i] < 1) invalid("repetition counts must be at least 1");
    if (i > 0 && repetitions[i] <= repetitions[i - 1]) invalid("repetition counts must be strictly ascending");
  }
  std::set<ModifierCategory> seen;
  for (const auto& l : lexicons) {
    if (!seen.insert(l.category).second) invalid("more than one lexicon for " + std::string(to_string(l.category)));
    if (l.source.empty()) invalid("lexicon source for " + std::string(to_string(l.category)) + " is empty");
    if (l.limit && *l.limit == 0) invalid("lexicon limit must be positive");
  }
  if (metrics.empty()) invalid("at least one metric is required");
  if (tokenizer != "whitespace" && tokenizer != "adapter") invalid("tokenizer must be \"whitespace\" or \"adapter\"");
  if (workers < 0) invalid("workers must be >= 0");
  try {
    generation.validate();
  } catch (const Error& e) {
    invalid(std::string("generation: ") + e.what());
  }
  try {
    synthetic_profile().validate();
  } catch (const Error& e) {
    invalid(std::string("synthetic: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::from_toml(std::string_view text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
    invalid(msg.str());
  }
  const toml::node_view<const toml::node> doc{static_cast<const toml::node&>(root)};

  ExperimentConfig cfg;
  cfg.name = toml_value<std::string>(doc["name"], "name").value_or(cfg.name);

  cfg.base_prompts = toml_strings(doc["prompts"]["bases"], "prompts.bases");
  for (auto s : toml_ints(doc["prompts"]["seeds"], "prompts.seeds")) {
    if (s < 0) invalid("seeds must be non-negative");
    cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (doc["prompts"]["repetitions"]) {
    cfg.repetitions.clear();
    for (auto r : toml_ints(doc["prompts"]["repetitions"], "prompts.repetitions")) cfg.repetitions.push_back(static_cast<int>(r));
  }

  if (const toml::table* lex = root["lexicons"].as_table()) {
    for (const auto& [key, node] : *lex) {
      LexiconRef ref;
      ref.category = config_category(key.str());
      if (auto s = node.value<std::string>()) {
        ref.source = resolve_source(base_dir, *s);
      } else if (const toml::table* t = node.as_table()) {
        auto path = (*t)["path"].value<std::string>();
        if (!path) invalid("lexicons." + std::string(key.str()) + " needs a path");
        ref.source = resolve_source(base_dir, *path);
        if (auto limit = (*t)["limit"].value<std::int64_t>()) {
          if (*limit < 1) invalid("lexicon limit must be positive");
          ref.limit = static_cast<std::size_t>(*limit);
        }
      } else {
        invalid("lexicons." + std::string(key.str()) + " must be a path or a table");
      }
      cfg.lexicons.push_back(std::move(ref));
    }
  }
  std::sort(cfg.lexicons.begin(), cfg.lexicons.end(),
            [](const LexiconRef& a, const LexiconRef& b) { return a.category < b.category; });

  if (const toml::table* tmpl = root["templates"].as_table()) {
    for (const auto& [key, node] : *tmpl) {
      auto s = node.value<std::string>();
      if (!s) invalid("templates." + std::string(key.str()) + " must be a string");
      cfg.templates[config_category(key.str())] = template_from_text(*s);
    }
  }

  const auto gen = doc["generation"];
  GenerationSpec& g = cfg.generation;
  g.backend_id = toml_value<std::string>(gen["backend"], "generation.backend").value_or(g.backend_id);
  g.model_id = toml_value<std::string>(gen["model"], "generation.model").value_or(g.model_id);
  g.scheduler_id = toml_value<std::string>(gen["scheduler"], "generation.scheduler").value_or(g.scheduler_id);
  g.steps = static_cast<int>(toml_value<std::int64_t>(gen["steps"], "generation.steps").value_or(g.steps));
  g.guidance_scale = toml_value<double>(gen["guidance_scale"], "generation.guidance_scale").value_or(g.guidance_scale);
  g.width = static_cast<int>(toml_value<std::int64_t>(gen["width"], "generation.width").value_or(g.width));
  g.height = static_cast<int>(toml_value<std::int64_t>(gen["height"], "generation.height").value_or(g.height));
  cfg.tokenizer = toml_value<std::string>(gen["tokenizer"], "generation.tokenizer").value_or(cfg.tokenizer);
  cfg.adapter_url = toml_value<std::string>(gen["adapter_url"], "generation.adapter_url").value_or("");

  const auto met = doc["metrics"];
  if (met["use"]) {
    cfg.metrics.clear();
    for (const auto& m : toml_strings(met["use"], "metrics.use")) cfg.metrics.push_back(config_metric(m));
  }
  if (auto w = toml_value<std::string>(met["lpips_weights"], "metrics.lpips_weights")) {
    cfg.metric_config.lpips.location = resolve_source(base_dir, *w);
  }
  cfg.metric_config.lpips.digest = toml_value<std::string>(met["lpips_digest"], "metrics.lpips_digest").value_or("");
  if (auto w = toml_value<std::string>(met["vgg_weights"], "metrics.vgg_weights")) {
    cfg.metric_config.vgg.location = resolve_source(base_dir, *w);
  }
  cfg.metric_config.vgg.digest = toml_value<std::string>(met["vgg_digest"], "metrics.vgg_digest").value_or("");
  if (auto w = toml_value<std::string>(met["watson_config"], "metrics.watson_config")) {
    cfg.metric_config.watson_config = resolve_path(base_dir, *w);
  }
  cfg.metric_config.text_encoders =
      toml_value<std::string>(met["text_encoders"], "metrics.text_encoders").value_or(cfg.metric_config.text_encoders);
  if (cfg.metric_config.text_encoders != "hashed" && cfg.metric_config.text_encoders != "http") {
    invalid("metrics.text_encoders must be \"hashed\" or \"http\"");
  }
  cfg.metric_config.adapter_url = cfg.adapter_url;

  const auto out = doc["output"];
  if (auto d = toml_value<std::string>(out["dir"], "output.dir")) cfg.output_dir = resolve_path(base_dir, *d);
  if (auto d = toml_value<std::string>(out["cache_dir"], "output.cache_dir")) cfg.cache_dir = resolve_path(base_dir, *d);
  cfg.workers = static_cast<int>(toml_value<std::int64_t>(out["workers"], "output.workers").value_or(0));

  if (const toml::table* syn = root["synthetic"].as_table()) {
    for (const auto& [key, node] : *syn) {
      const std::string k(key.str());
      if (k == "overrides") {
        const toml::table* t = node.as_table();
        if (!t) invalid("synthetic.overrides must be a table");
        for (const auto& [text, weight] : *t) {
          auto w = weight.value<double>();
          if (!w) invalid("synthetic.overrides values must be numbers");
          cfg.synthetic_overrides[std::string(text.str())] = *w;
        }
        continue;
      }
      auto w = node.value<double>();
      if (!w) invalid("synthetic." + k + " must be a number");
      if (k == "jitter") cfg.synthetic_jitter = *w;
      else if (k == "unknown_weight") cfg.synthetic_unknown_weight = *w;
      else if (k == "lighting_low") cfg.synthetic_lighting_low = *w;
      else if (k == "lighting_high") cfg.synthetic_lighting_high = *w;
      else if (auto c = parse_category(k)) cfg.synthetic_weights[*c] = *w;
      else invalid("unknown key synthetic." + k);
    }
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return from_toml(text.str(), path.parent_path());
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json lex = nlohmann::json::array();
  for (const auto& l : lexicons) {
    nlohmann::json e{{"category", to_string(l.category)}, {"source", l.source}};
    if (l.limit) e["limit"] = *l.limit;
    lex.push_back(e);
  }
  nlohmann::json templates_json = nlohmann::json::object();
  for (const auto& [c, t] : templates) {
    templates_json[std::string(to_string(c))] = {{"pattern", t.pattern}, {"join_rule", to_string(t.join_rule)}};
  }
  nlohmann::json metric_names = nlohmann::json::array();
  for (MetricId m : metrics) metric_names.push_back(to_string(m));
  nlohmann::json synthetic = nlohmann::json::object();
  for (const auto& [c, w] : synthetic_weights) synthetic[std::string(to_string(c))] = w;
  if (synthetic_jitter) synthetic["jitter"] = *synthetic_jitter;
  if (synthetic_unknown_weight) synthetic["unknown_weight"] = *synthetic_unknown_weight;
  if (synthetic_lighting_low) synthetic["lighting_low"] = *synthetic_lighting_low;
  if (synthetic_lighting_high) synthetic["lighting_high"] = *synthetic_lighting_high;
  if (!synthetic_overrides.empty()) synthetic["overrides"] = synthetic_overrides;

  nlohmann::json j{{"name", name},
                   {"base_prompts", base_prompts},
                   {"seeds", seeds},
                   {"repetitions", repetitions},
                   {"lexicons", lex},
                   {"templates", templates_json},
                   {"generation", generation},
                   {"metrics", metric_names},
                   {"metric_config", metric_config.to_json()},
                   {"tokenizer", tokenizer},
                   {"output_dir", output_dir.string()},
                   {"workers", workers},
                   {"synthetic", synthetic}};
  if (!adapter_url.empty()) j["adapter_url"] = adapter_url;
  if (cache_dir) j["cache_dir"] = cache_dir->string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    cfg.name = j.at("name").get<std::string>();
    cfg.base_prompts = j.at("base_prompts").get<std::vector<std::string>>();
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.repetitions = j.at("repetitions").get<std::vector<int>>();
    for (const auto& e : j.at("lexicons")) {
      LexiconRef ref{config_category(e.at("category").get<std::string>()), e.at("source").get<std::string>(),
                     std::nullopt};
      if (e.contains("limit")) ref.limit = e.at("limit").get<std::size_t>();
      cfg.lexicons.push_back(ref);
    }
    cfg.templates.clear();
    for (const auto& [c, t] : j.at("templates").items()) {
      auto rule = parse_join_rule(t.at("join_rule").get<std::string>());
      cfg.templates[config_category(c)] = {t.at("pattern").get<std::string>(), rule.value_or(JoinRule::kCommaSuffix)};
    }
    cfg.generation = j.at("generation").get<GenerationSpec>();
    cfg.metrics.clear();
    for (const auto& m : j.at("metrics")) cfg.metrics.push_back(config_metric(m.get<std::string>()));
    cfg.metric_config = MetricSuiteConfig::from_json(j.at("metric_config"));
    cfg.tokenizer = j.value("tokenizer", cfg.tokenizer);
    cfg.adapter_url = j.value("adapter_url", "");
    cfg.output_dir = j.value("output_dir", "");
    if (j.contains("cache_dir")) cfg.cache_dir = j.at("cache_dir").get<std::string>();
    cfg.workers = j.value("workers", 0);
    const auto synthetic = j.value("synthetic", nlohmann::json::object());
    for (const auto& [k, v] : synthetic.items()) {
      if (k == "overrides") cfg.synthetic_overrides = v.get<std::map<std::string, double>>();
      else if (k == "jitter") cfg.synthetic_jitter = v.get<double>();
      else if (k == "unknown_weight") cfg.synthetic_unknown_weight = v.get<double>();
      else if (k == "lighting_low") cfg.synthetic_lighting_low = v.get<double>();
      else if (k == "lighting_high") cfg.synthetic_lighting_high = v.get<double>();
      else cfg.synthetic_weights[config_category(k)] = v.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("config json: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::filesystem::path ExperimentConfig::resolved_output_dir() const {
  return output_dir.empty() ? std::filesystem::path("runs") / name : output_dir;
}

std::filesystem::path ExperimentConfig::resolved_cache_dir() const {
  if (cache_dir) return *cache_dir;
  if (auto env = env_or_empty("PROMPTLENS_CACHE_DIR"); !env.empty()) return env;
  return resolved_output_dir() / "cache";
}

std::vector<Lexicon> ExperimentConfig::load_lexicons() const {
  std::vector<Lexicon> out;
  for (const auto& ref : lexicons) {
    Lexicon lex = load_lexicon(ref.source);
    if (lex.category() != ref.category) {
      invalid("lexicon " + ref.source + " declares category " + std::string(to_string(lex.category())) +
              ", configured as " + std::string(to_string(ref.category)));
    }
    out.push_back(ref.limit ? lex.truncated(*ref.limit) : std::move(lex));
  }
  return out;
}

SyntheticEffectProfile ExperimentConfig::synthetic_profile() const {
  SyntheticEffectProfile profile = SyntheticEffectProfile::defaults();
  for (const auto& [c, w] : synthetic_weights) profile.category_weights[c] = w;
  if (synthetic_jitter) profile.weight_jitter = *synthetic_jitter;
  if (synthetic_unknown_weight) profile.unknown_weight = *synthetic_unknown_weight;
  if (synthetic_lighting_low) profile.lighting_low = *synthetic_lighting_low;
  if (synthetic_lighting_high) profile.lighting_high = *synthetic_lighting_high;
  for (const auto& [text, w] : synthetic_overrides) {
    std::string key = text;
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    profile.overrides[key] = w;
  }
  for (const auto& ref : lexicons) {
    if (!ref.source.starts_with("builtin:")) {
      try {
        profile.register_lexicon(load_lexicon(ref.source));
      } catch (const Error&) {
        // Reported by plan_runs when the lexicon is actually needed.
      }
    }
  }
  return profile;
}

// ---------------------------------------------------------------- presets

std::vector<std::string> preset_names() {
  return {"category_sweep", "repetition_sweep", "lighting_bimodality", "artist_sweep", "correlation_study"};
}

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig cfg;
  cfg.name = std::string(name);
  cfg.generation.width = kPresetSize;
  cfg.generation.height = kPresetSize;
  const std::vector<std::string> bases{"A cat", "A portrait of a woman", "A city street at night"};
  auto lex = [](ModifierCategory c, std::optional<std::size_t> limit) {
    return LexiconRef{c, "builtin:" + std::string(to_string(c)), limit};
  };
  if (name == "category_sweep") {
    cfg.base_prompts = bases;
    cfg.seeds = {0, 1};
    cfg.lexicons = {lex(ModifierCategory::kDescriptor, 5), lex(ModifierCategory::kNoun, 5),
                    lex(ModifierCategory::kArtist, 5)};
  } else if (name == "repetition_sweep") {
    cfg.base_prompts = {bases[0], bases[1]};
    cfg.seeds = {0, 1};
    cfg.repetitions = {1, 2, 3, 5};
    cfg.lexicons = {lex(ModifierCategory::kDescriptor, 3), lex(ModifierCategory::kNoun, 3)};
  } else if (name == "lighting_bimodality") {
    cfg.base_prompts = bases;
    cfg.seeds = {0, 1, 2, 3};
    cfg.lexicons = {lex(ModifierCategory::kLighting, std::nullopt)};
  } else if (name == "artist_sweep") {
    cfg.base_prompts = {"A portrait of a beautiful woman"};
    cfg.seeds = {0};
    cfg.lexicons = {lex(ModifierCategory::kArtist, std::nullopt)};
    cfg.templates[ModifierCategory::kArtist] = PromptTemplate::style_of();
  } else if (name == "correlation_study") {
    cfg.base_prompts = bases;
    cfg.seeds = {0, 1};
    cfg.lexicons = {lex(ModifierCategory::kDescriptor, 8), lex(ModifierCategory::kNoun, 8),
                    lex(ModifierCategory::kArtist, 8), lex(ModifierCategory::kLighting, 8)};
  } else {
    throw Error(ErrorCode::kUnknownPreset, "unknown preset '" + std::string(name) + "'");
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- manifest

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::kPending: return "pending";
    case RunStatus::kDone: return "done";
    case RunStatus::kFailed: return "failed";
  }
  return "pending";
}

namespace {

RunStatus status_from_string(const std::string& s) {
  if (s == "pending") return RunStatus::kPending;
  if (s == "done") return RunStatus::kDone;
  if (s == "failed") return RunStatus::kFailed;
  throw Error(ErrorCode::kParseError, "unknown run status '" + s + "'");
}

}  // namespace

std::size_t RunManifest::count(RunStatus status) const {
  return static_cast<std::size_t>(
      std::count_if(runs.begin(), runs.end(), [&](const PlannedRun& r) { return r.status == status; }));
}

void RunManifest::advance(std::size_t index, RunStatus status, std::string content_hash, std::string error) {
  if (index >= runs.size()) throw Error(ErrorCode::kInvalidArgument, "run index out of range");
  PlannedRun& run = runs[index];
  const bool allowed = run.status == RunStatus::kPending ? status != RunStatus::kPending
                       : run.status == RunStatus::kFailed ? status == RunStatus::kDone || status == RunStatus::kFailed
                                                          : status == RunStatus::kDone;
  if (!allowed) {
    throw Error(ErrorCode::kInvalidArgument, "run " + run.run_id + " cannot move from " +
                                                 std::string(to_string(run.status)) + " to " +
                                                 std::string(to_string(status)));
  }
  run.status = status;
  if (!content_hash.empty()) run.content_hash = std::move(content_hash);
  run.error = status == RunStatus::kFailed ? std::move(error) : std::string();
  run.updated_at = utc_timestamp();
  updated_at = run.updated_at;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json run_list = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json e{{"run_id", r.run_id},   {"index", r.index},   {"base_index", r.base_index},
                     {"seed", r.seed},       {"variant", r.variant}, {"status", to_string(r.status)}};
    if (!r.base_run_id.empty()) e["base_run_id"] = r.base_run_id;
    if (!r.content_hash.empty()) e["content_hash"] = r.content_hash;
    if (!r.error.empty()) e["error"] = r.error;
    if (!r.updated_at.empty()) e["updated_at"] = r.updated_at;
    run_list.push_back(std::move(e));
  }
  return {{"name", name},
          {"config", config},
          {"toolkit_version", toolkit_version},
          {"backend_id", backend_id},
          {"model_id", model_id},
          {"provenance", provenance},
          {"planned_count", planned_count},
          {"counts",
           {{"pending", count(RunStatus::kPending)}, {"done", count(RunStatus::kDone)}, {"failed", count(RunStatus::kFailed)}}},
          {"created_at", created_at},
          {"updated_at", updated_at},
          {"runs", run_list}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.config = j.at("config");
    m.toolkit_version = j.value("toolkit_version", "");
    m.backend_id = j.value("backend_id", "");
    m.model_id = j.value("model_id", "");
    m.provenance = j.value("provenance", nlohmann::json::object());
    m.planned_count = j.at("planned_count").get<std::size_t>();
    m.created_at = j.value("created_at", "");
    m.updated_at = j.value("updated_at", "");
    for (const auto& e : j.at("runs")) {
      PlannedRun r;
      r.run_id = e.at("run_id").get<std::string>();
      r.index = e.at("index").get<std::size_t>();
      r.base_index = e.at("base_index").get<std::size_t>();
      r.seed = e.at("seed").get<std::uint64_t>();
      r.variant = e.at("variant").get<PromptVariant>();
      r.status = status_from_string(e.at("status").get<std::string>());
      r.base_run_id = e.value("base_run_id", "");
      r.content_hash = e.value("content_hash", "");
      r.error = e.value("error", "");
      r.updated_at = e.value("updated_at", "");
      m.runs.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void RunManifest::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(1) + "\n"); }

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kParseError, "manifest is not valid JSON: " + path.string());
  return from_json(j);
}

std::size_t planned_generation_count(std::size_t bases, std::size_t seeds, std::size_t lexicon_total,
                                     std::size_t repetitions) {
  return bases * seeds * (1 + lexicon_total * repetitions);
}

RunManifest plan_runs(const ExperimentConfig& config, const Tokenizer& tokenizer) {
  config.validate();
  const std::vector<Lexicon> lexicons = config.load_lexicons();
  std::size_t lexicon_total = 0;
  for (const auto& l : lexicons) lexicon_total += l.size();

  RunManifest m;
  m.name = config.name;
  m.config = config.to_json();
  m.toolkit_version = std::string(toolkit_version());
  m.backend_id = config.generation.backend_id;
  m.model_id = config.generation.model_id;
  m.planned_count = planned_generation_count(config.base_prompts.size(), config.seeds.size(), lexicon_total,
                                             config.repetitions.size());
  m.created_at = utc_timestamp();
  m.updated_at = m.created_at;

  for (std::size_t b = 0; b < config.base_prompts.size(); ++b) {
    const auto variants =
        expand_variants(config.base_prompts[b], lexicons, config.repetitions, config.templates, tokenizer);
    for (std::uint64_t seed : config.seeds) {
      std::string base_run_id;
      for (const auto& v : variants) {
        PlannedRun r;
        r.index = m.runs.size();
        r.run_id = format_run_id(r.index);
        r.base_index = b;
        r.seed = seed;
        r.variant = v;
        if (v.is_base()) {
          base_run_id = r.run_id;
        } else {
          r.base_run_id = base_run_id;
        }
        m.runs.push_back(std::move(r));
      }
    }
  }
  if (m.runs.size() != m.planned_count) {
    throw Error(ErrorCode::kInvalidConfig, "planner enumerated " + std::to_string(m.runs.size()) + " runs, expected " +
                                               std::to_string(m.planned_count));
  }
  return m;
}

// ---------------------------------------------------------------- store

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read store " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Parses complete lines only; a torn tail is the caller's business.
std::vector<PairObservation> parse_store(const std::string& content, const std::filesystem::path& path) {
  std::vector<PairObservation> out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  for (std::size_t nl; (nl = content.find('\n', start)) != std::string::npos; start = nl + 1) {
    ++line_no;
    const std::string_view line(content.data() + start, nl - start);
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(line_no) + ": not valid JSON");
    }
    try {
      out.push_back(j.get<PairObservation>());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

ResultStore::ResultStore(std::filesystem::path path) : path_(std::move(path)) {
  std::error_code ec;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path(), ec);
  if (std::filesystem::exists(path_)) {
    std::string content = read_all(path_);
    const auto last_newline = content.rfind('\n');
    const std::size_t keep = last_newline == std::string::npos ? 0 : last_newline + 1;
    if (keep < content.size()) {
      repaired_bytes_ = content.size() - keep;
      std::filesystem::resize_file(path_, keep, ec);
      if (ec) throw Error(ErrorCode::kIoError, "cannot repair torn store " + path_.string(), ec.message());
      content.resize(keep);
    }
    observations_ = parse_store(content, path_);
    for (const auto& o : observations_) run_ids_.insert(o.run_id);
  } else {
    std::ofstream create(path_, std::ios::binary);
    if (!create) throw Error(ErrorCode::kIoError, "cannot create store " + path_.string());
  }
}

std::vector<PairObservation> ResultStore::read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kNotFound, "no store at " + path.string());
  return parse_store(read_all(path), path);
}

void ResultStore::append(const PairObservation& observation) {
  if (run_ids_.contains(observation.run_id)) {
    throw Error(ErrorCode::kDuplicateEntry, "run " + observation.run_id + " is already in the store");
  }
  const std::string line = nlohmann::json(observation).dump() + "\n";
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::kIoError, "cannot append to store " + path_.string());
  run_ids_.insert(observation.run_id);
  observations_.push_back(observation);
}

std::vector<const PairObservation*> ResultStore::select(ModifierCategory category, MetricId metric) const {
  std::vector<const PairObservation*> out;
  for (const auto& o : observations_) {
    if (o.category == category && o.has(metric)) out.push_back(&o);
  }
  return out;
}

// ---------------------------------------------------------------- execution

Runtime make_runtime(const ExperimentConfig& config) {
  Runtime rt;
  rt.cache = std::make_shared<ImageCache>(config.resolved_cache_dir());
  std::string url = config.adapter_url.empty() ? backend_url_from_env() : config.adapter_url;
  std::shared_ptr<AdapterClient> client;
  if (!url.empty()) client = std::make_shared<AdapterClient>(url);
  if (config.tokenizer == "adapter") {
    if (!client) throw Error(ErrorCode::kBackendUnavailable, "tokenizer \"adapter\" needs an adapter url");
    rt.tokenizer = std::make_shared<HttpTokenizer>(client);
  } else {
    rt.tokenizer = std::make_shared<WhitespaceTokenizer>();
  }
  rt.generator = std::make_shared<Generator>(rt.cache, rt.tokenizer);
  rt.generator->register_backend(std::make_shared<SyntheticBackend>(config.synthetic_profile()));
  if (client) rt.generator->register_backend(std::make_shared<HttpDiffusionBackend>(client));
  MetricSuiteConfig mc = config.metric_config;
  if (mc.adapter_url.empty()) mc.adapter_url = url;
  rt.metrics = std::make_shared<MetricSuite>(mc);
  return rt;
}

namespace {

PairObservation score_observation(const PlannedRun& run, const PlannedRun& base_run, const ImageRecord& base,
                                  const ImageRecord& probe, const ExperimentConfig& config, const MetricSuite& suite) {
  PairObservation o;
  o.run_id = run.run_id;
  o.base_variant = base_run.variant;
  o.probe_variant = run.variant;
  o.category = run.variant.modifier->category;
  o.repetition_count = run.variant.repetition_count;
  o.seed = run.seed;
  o.base_hash = base.content_hash;
  o.probe_hash = probe.content_hash;
  for (MetricId m : config.metrics) {
    try {
      o.scores[m] = is_image_metric(m) ? suite.image_distance(base, probe, m)
                                       : suite.text_similarity(base_run.variant.composed, run.variant.composed, m);
    } catch (const std::exception& e) {
      o.metric_errors[m] = e.what();
    }
  }
  return o;
}

}  // namespace

ExecuteSummary execute(RunManifest& manifest, const ExperimentConfig& config, Runtime& runtime, ResultStore& store,
                       const ExecuteOptions& options) {
  ExecuteSummary summary;
  const std::uint64_t invocations_before = runtime.generator->backend_invocations();
  const std::uint64_t hits_before = runtime.generator->cache_hits();

  std::map<std::string, std::size_t> index_of;
  for (const auto& r : manifest.runs) index_of[r.run_id] = r.index;

  // The store is authoritative: anything it holds is done, whatever the
  // manifest says (it may lag behind a killed process).
  for (const auto& o : store.observations()) {
    auto it = index_of.find(o.run_id);
    if (it == index_of.end()) continue;
    PlannedRun& r = manifest.runs[it->second];
    if (r.status != RunStatus::kDone) manifest.advance(r.index, RunStatus::kDone, o.probe_hash);
    auto base = index_of.find(r.base_run_id);
    if (base != index_of.end() && manifest.runs[base->second].status != RunStatus::kDone) {
      manifest.advance(base->second, RunStatus::kDone, o.base_hash);
    }
  }

  std::vector<std::size_t> pending;
  for (const auto& r : manifest.runs) {
    const bool done = r.status == RunStatus::kDone && (r.is_base() || store.contains(r.run_id));
    if (done) {
      ++summary.skipped;
    } else {
      pending.push_back(r.index);
    }
  }

  if (manifest.provenance.empty() || manifest.provenance.contains("error")) {
    try {
      manifest.provenance = runtime.metrics->provenance(config.metrics);
    } catch (const std::exception& e) {
      manifest.provenance = {{"error", e.what()}};
    }
  }
  if (runtime.generator->has_backend(config.generation.backend_id)) {
    manifest.model_id = runtime.generator->resolve(config.generation).model_id;
  }

  int workers = options.workers > 0 ? options.workers : config.workers;
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(pending.size(), 1))));

  std::mutex mutex;
  std::condition_variable ready;
  std::map<std::size_t, RunResult> finished;  // keyed by position in `pending`
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> workers_alive{static_cast<std::size_t>(workers)};
  std::stop_source abort;

  auto run_one = [&](std::size_t run_index) -> RunResult {
    const PlannedRun& run = manifest.runs[run_index];
    RunResult res;
    res.index = run_index;
    GenerationSpec spec = config.generation;
    spec.seed = run.seed;
    if (run.is_base()) {
      try {
        res.content_hash = runtime.generator->generate(spec, run.variant.composed).content_hash;
        res.status = RunStatus::kDone;
      } catch (const std::exception& e) {
        res.error = e.what();
      }
      return res;
    }
    const PlannedRun& base_run = manifest.runs[index_of.at(run.base_run_id)];
    ImageRecord base;
    try {
      base = runtime.generator->generate(spec, base_run.variant.composed);
    } catch (const std::exception& e) {
      res.error = std::string("base generation failed: ") + e.what();
      return res;
    }
    ImageRecord probe;
    try {
      probe = runtime.generator->generate(spec, run.variant.composed);
    } catch (const std::exception& e) {
      res.error = e.what();
      return res;
    }
    res.content_hash = probe.content_hash;
    res.observation = score_observation(run, base_run, base, probe, config, *runtime.metrics);
    res.status = RunStatus::kDone;
    return res;
  };

  auto worker = [&] {
    for (;;) {
      if (options.stop.stop_requested() || abort.get_token().stop_requested()) break;
      const std::size_t pos = next.fetch_add(1);
      if (pos >= pending.size()) break;
      RunResult res = run_one(pending[pos]);
      {
        std::lock_guard lock(mutex);
        finished.emplace(pos, std::move(res));
      }
      ready.notify_one();
    }
    workers_alive.fetch_sub(1);
    ready.notify_one();
  };

  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) pool.emplace_back(worker);

  std::size_t since_flush = 0;
  std::size_t done_count = summary.skipped;
  const RunPaths paths{config.resolved_output_dir()};
  auto commit = [&](RunResult& res) {
    if (res.observation) store.append(*res.observation);
    manifest.advance(res.index, res.status, res.content_hash, res.error);
    if (res.status == RunStatus::kFailed) ++summary.failed;
    ++summary.executed;
    ++done_count;
    if (options.on_progress) options.on_progress(manifest.runs[res.index], done_count, manifest.runs.size());
    if (++since_flush >= options.manifest_flush_every && std::filesystem::exists(paths.dir)) {
      manifest.save(paths.manifest());
      since_flush = 0;
    }
  };

  // Single writer: commit results in plan order.
  try {
    std::size_t expected = 0;
    for (;;) {
      std::unique_lock lock(mutex);
      ready.wait(lock, [&] { return finished.contains(expected) || workers_alive.load() == 0; });
      if (!finished.contains(expected)) break;
      RunResult res = std::move(finished.at(expected));
      finished.erase(expected);
      lock.unlock();
      commit(res);
      ++expected;
    }
    // After a stop request, keep whatever finished out of order.
    std::lock_guard lock(mutex);
    for (auto& [pos, res] : finished) commit(res);
    finished.clear();
  } catch (...) {
    abort.request_stop();
    pool.clear();
    throw;
  }
  pool.clear();

  summary.stopped = summary.executed < pending.size();
  summary.backend_invocations = runtime.generator->backend_invocations() - invocations_before;
  summary.cache_hits = runtime.generator->cache_hits() - hits_before;
  return summary;
}

ExecuteSummary run_experiment(const ExperimentConfig& config, const ExecuteOptions& options) {
  const RunPaths paths{config.resolved_output_dir()};
  std::filesystem::create_directories(paths.dir);
  Runtime runtime = make_runtime(config);

  RunManifest manifest;
  if (std::filesystem::exists(paths.manifest())) {
    manifest = RunManifest::load(paths.manifest());
    if (manifest.config != config.to_json()) {
      throw Error(ErrorCode::kInvalidConfig, "output directory " + paths.dir.string() +
                                                 " holds a different experiment; choose another output dir");
    }
  } else {
    manifest = plan_runs(config, *runtime.tokenizer);
    write_file_atomic(paths.config(), config.to_json().dump(2) + "\n");
    manifest.save(paths.manifest());
  }
  ResultStore store(paths.store());
  ExecuteSummary summary = execute(manifest, config, runtime, store, options);
  manifest.save(paths.manifest());
  return summary;
}

}  // namespace promptlens
