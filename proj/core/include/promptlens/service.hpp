#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptlens/error.hpp"
#include "promptlens/generator.hpp"
#include "promptlens/metrics/metric_suite.hpp"

namespace promptlens {

struct ServiceConfig {
  /// Sessions live in <root>/sessions; runs are read from `runs_dir`.
  std::filesystem::path root = ".";
  std::filesystem::path runs_dir = "runs";
  std::optional<std::filesystem::path> cache_dir;  // default: PROMPTLENS_CACHE_DIR, then <root>/cache
  GenerationSpec defaults = [] {
    GenerationSpec s;
    s.width = 128;
    s.height = 128;
    return s;
  }();
  std::vector<MetricId> metrics{kAllMetrics.begin(), kAllMetrics.end()};
  MetricSuiteConfig metric_config;
  std::string backend_url;  // default: PROMPTLENS_BACKEND_URL
  std::optional<std::filesystem::path> static_dir;
};

struct ProbeRecord {
  std::size_t index = 0;
  Modifier modifier;
  int repetition_count = 1;
  std::string prompt;
  std::string image_hash;
  std::map<MetricId, MetricScore> scores;
  std::map<MetricId, std::string> metric_errors;
  std::string created_at;
};

struct Session {
  std::string session_id;
  std::string base_prompt;
  std::uint64_t seed = 0;
  GenerationSpec spec;
  std::string base_image_hash;
  std::string created_at;
  std::vector<ProbeRecord> history;
};

nlohmann::json to_json(const ProbeRecord& p);
ProbeRecord probe_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Session& s);
Session session_from_json(const nlohmann::json& j);

/// HTTP status for an error code: 404 not found, 422 invalid input,
/// 503 backend/encoder/weights unavailable, 502 generation failure, else 500.
int http_status(ErrorCode code);
nlohmann::json error_body(const Error& e);

/// Interactive probe sessions, persisted one JSON file per session. Probes of
/// one session are serialised; different sessions run concurrently.
class SessionManager {
 public:
  SessionManager(ServiceConfig config, std::shared_ptr<Generator> generator, std::shared_ptr<MetricSuite> metrics);

  /// Generates the base image eagerly. Throws kTokenBudgetExceeded,
  /// kEmptyBase, kBackendUnavailable, kGenerationFailed.
  Session create(const std::string& base_prompt, std::uint64_t seed, const nlohmann::json& overrides = {});
  /// Throws kSessionNotFound; generation failures leave history untouched.
  ProbeRecord probe(const std::string& session_id, const std::string& modifier, ModifierCategory category,
                    int repetition_count = 1);
  Session get(const std::string& session_id) const;
  std::vector<Session> list() const;

  const ServiceConfig& config() const noexcept { return config_; }
  Generator& generator() noexcept { return *generator_; }

 private:
  struct Entry {
    std::mutex mutex;
    Session session;
  };
  std::filesystem::path session_path(const std::string& id) const;
  void persist(const Session& s) const;
  std::shared_ptr<Entry> find(const std::string& id) const;

  ServiceConfig config_;
  std::shared_ptr<Generator> generator_;
  std::shared_ptr<MetricSuite> metrics_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

/// JSON API:
///   GET  /api/health
///   POST /api/sessions                      {base_prompt, seed, spec?}
///   GET  /api/sessions[?offset=&limit=]
///   GET  /api/sessions/{id}
///   POST /api/sessions/{id}/probes          {modifier, category, repetition_count?}
///   GET  /api/images/{content_hash}         image/png, immutable
///   GET  /api/runs[?offset=&limit=]
///   GET  /api/runs/{id}
///   GET  /api/runs/{id}/observations[?category=&metric=&offset=&limit=]
/// Errors: {code, message, detail} with the status from http_status().
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds without serving; port 0 picks a free port. Returns the bound
  /// port. Throws kIoError.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void serve();
  void stop();

  SessionManager& sessions() noexcept { return *sessions_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::shared_ptr<SessionManager> sessions_;
};

}  // namespace promptlens
