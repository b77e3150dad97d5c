#include "promptlens/service.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>

#include "promptlens/cache.hpp"
#include "promptlens/experiment.hpp"
#include "promptlens/http_adapter.hpp"
#include "promptlens/synthetic_backend.hpp"

namespace promptlens {

namespace {

constexpr std::size_t kDefaultPageSize = 100;
constexpr std::size_t kMaxPageSize = 1000;

nlohmann::json scores_json(const std::map<MetricId, MetricScore>& scores) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [m, s] : scores) j[std::string(to_string(m))] = {{"value", s.value}, {"orientation", to_string(s.orientation)}};
  return j;
}

std::string new_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mutex);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

bool is_hex_digest(const std::string& s) {
  return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

bool is_safe_name(const std::string& s) {
  return !s.empty() && s != "." && s != ".." && s.find('/') == std::string::npos && s.find('\\') == std::string::npos;
}

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

}  // namespace

nlohmann::json to_json(const ProbeRecord& p) {
  nlohmann::json similarity = nlohmann::json::object();
  for (const auto& [m, s] : p.scores) similarity[std::string(to_string(m))] = as_similarity(s).value;
  nlohmann::json errors = nlohmann::json::object();
  for (const auto& [m, e] : p.metric_errors) errors[std::string(to_string(m))] = e;
  return {{"index", p.index},
          {"modifier", p.modifier.text},
          {"category", to_string(p.modifier.category)},
          {"repetition_count", p.repetition_count},
          {"prompt", p.prompt},
          {"image_hash", p.image_hash},
          {"image_url", "/api/images/" + p.image_hash},
          {"scores", scores_json(p.scores)},
          {"similarity", similarity},
          {"metric_errors", errors},
          {"created_at", p.created_at}};
}

ProbeRecord probe_from_json(const nlohmann::json& j) {
  ProbeRecord p;
  p.index = j.at("index").get<std::size_t>();
  p.modifier = Modifier{j.at("modifier").get<std::string>(), category_from_string(j.at("category").get<std::string>()), ""};
  p.repetition_count = j.at("repetition_count").get<int>();
  p.prompt = j.at("prompt").get<std::string>();
  p.image_hash = j.at("image_hash").get<std::string>();
  for (const auto& [name, s] : j.at("scores").items()) {
    nlohmann::json full = s;
    full["metric"] = name;
    p.scores[metric_from_string(name)] = full.get<MetricScore>();
  }
  const auto errors = j.value("metric_errors", nlohmann::json::object());
  for (const auto& [name, e] : errors.items()) {
    p.metric_errors[metric_from_string(name)] = e.get<std::string>();
  }
  p.created_at = j.value("created_at", "");
  return p;
}

nlohmann::json to_json(const Session& s) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& p : s.history) history.push_back(to_json(p));
  return {{"session_id", s.session_id},
          {"base_prompt", s.base_prompt},
          {"seed", s.seed},
          {"spec", s.spec},
          {"base_image_hash", s.base_image_hash},
          {"base_image_url", "/api/images/" + s.base_image_hash},
          {"created_at", s.created_at},
          {"history", history}};
}

Session session_from_json(const nlohmann::json& j) {
  Session s;
  s.session_id = j.at("session_id").get<std::string>();
  s.base_prompt = j.at("base_prompt").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.spec = j.at("spec").get<GenerationSpec>();
  s.base_image_hash = j.at("base_image_hash").get<std::string>();
  s.created_at = j.value("created_at", "");
  for (const auto& p : j.at("history")) s.history.push_back(probe_from_json(p));
  return s;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSessionNotFound:
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kEmptyBase:
    case ErrorCode::kTokenBudgetExceeded:
    case ErrorCode::kParseError:
    case ErrorCode::kUnknownCategory:
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kUnknownPreset: return 422;
    case ErrorCode::kBackendUnavailable:
    case ErrorCode::kEncoderUnavailable:
    case ErrorCode::kWeightsUnavailable: return 503;
    case ErrorCode::kGenerationFailed: return 502;
    default: return 500;
  }
}

nlohmann::json error_body(const Error& e) {
  return {{"code", to_string(e.code())}, {"message", e.what()}, {"detail", e.detail()}};
}

// ---------------------------------------------------------------- sessions

SessionManager::SessionManager(ServiceConfig config, std::shared_ptr<Generator> generator,
                               std::shared_ptr<MetricSuite> metrics)
    : config_(std::move(config)), generator_(std::move(generator)), metrics_(std::move(metrics)) {
  const auto dir = config_.root / "sessions";
  std::filesystem::create_directories(dir);
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) continue;
    try {
      auto e = std::make_shared<Entry>();
      e->session = session_from_json(j);
      sessions_[e->session.session_id] = e;
    } catch (const std::exception&) {
      // Unreadable session files are left on disk and ignored.
    }
  }
}

std::filesystem::path SessionManager::session_path(const std::string& id) const {
  return config_.root / "sessions" / (id + ".json");
}

void SessionManager::persist(const Session& s) const {
  write_file_atomic(session_path(s.session_id), to_json(s).dump(1) + "\n");
}

std::shared_ptr<SessionManager::Entry> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::kSessionNotFound, "no session '" + id + "'");
  return it->second;
}

Session SessionManager::create(const std::string& base_prompt, std::uint64_t seed, const nlohmann::json& overrides) {
  nlohmann::json spec_json = config_.defaults;
  if (!overrides.is_null()) {
    if (!overrides.is_object()) throw Error(ErrorCode::kInvalidArgument, "spec overrides must be an object");
    spec_json.update(overrides);
  }
  GenerationSpec spec;
  try {
    spec = spec_json.get<GenerationSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("invalid spec override: ") + e.what());
  }
  spec.seed = seed;
  spec.validate();
  const PromptVariant base = compose_prompt(base_prompt, std::nullopt, 1, PromptTemplate::comma_suffix(),
                                            generator_->tokenizer());
  const ImageRecord record = generator_->generate(spec, base.composed);

  auto e = std::make_shared<Entry>();
  e->session.session_id = new_session_id();
  e->session.base_prompt = base.composed;
  e->session.seed = seed;
  e->session.spec = generator_->resolve(spec);
  e->session.base_image_hash = record.content_hash;
  e->session.created_at = utc_timestamp();
  persist(e->session);
  std::lock_guard lock(mutex_);
  sessions_[e->session.session_id] = e;
  return e->session;
}

ProbeRecord SessionManager::probe(const std::string& session_id, const std::string& modifier,
                                  ModifierCategory category, int repetition_count) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  Session& s = entry->session;
  const Modifier mod = Modifier::make(modifier, category);
  const PromptTemplate tmpl = default_template_map().at(category);
  const PromptVariant variant = compose_prompt(s.base_prompt, mod, repetition_count, tmpl, generator_->tokenizer());

  const ImageRecord base = generator_->generate(s.spec, s.base_prompt);
  const ImageRecord probe = generator_->generate(s.spec, variant.composed);

  ProbeRecord p;
  p.index = s.history.size();
  p.modifier = mod;
  p.repetition_count = variant.repetition_count;
  p.prompt = variant.composed;
  p.image_hash = probe.content_hash;
  for (MetricId m : config_.metrics) {
    try {
      p.scores[m] = is_image_metric(m) ? metrics_->image_distance(base, probe, m)
                                       : metrics_->text_similarity(s.base_prompt, variant.composed, m);
    } catch (const std::exception& ex) {
      p.metric_errors[m] = ex.what();
    }
  }
  p.created_at = utc_timestamp();
  Session updated = s;
  updated.history.push_back(p);
  persist(updated);
  s = std::move(updated);
  return p;
}

Session SessionManager::get(const std::string& session_id) const {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  return entry->session;
}

std::vector<Session> SessionManager::list() const {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, e] : sessions_) entries.push_back(e);
  }
  std::vector<Session> out;
  for (const auto& e : entries) {
    std::lock_guard lock(e->mutex);
    out.push_back(e->session);
  }
  std::sort(out.begin(), out.end(), [](const Session& a, const Session& b) {
    return std::tie(a.created_at, a.session_id) < std::tie(b.created_at, b.session_id);
  });
  return out;
}

// ---------------------------------------------------------------- http

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<ImageCache> cache;
  httplib::Server server;
  std::atomic<bool> bound{false};
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) { send_json(res, http_status(e.code()), error_body(e)); }

template <typename Handler>
auto guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"code", "ParseError"}, {"message", "malformed JSON request"}, {"detail", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"code", "Internal"}, {"message", e.what()}, {"detail", ""}});
    }
  };
}

std::size_t query_size(const httplib::Request& req, const std::string& key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "query parameter " + key + " must be a non-negative integer");
  }
}

template <typename T, typename ToJson>
nlohmann::json page(const httplib::Request& req, const std::vector<T>& items, ToJson to_json_fn) {
  const std::size_t offset = query_size(req, "offset", 0);
  const std::size_t limit = std::min(query_size(req, "limit", kDefaultPageSize), kMaxPageSize);
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = offset; i < items.size() && i < offset + limit; ++i) list.push_back(to_json_fn(items[i]));
  return {{"total", items.size()}, {"offset", offset}, {"limit", limit}, {"items", list}};
}

nlohmann::json run_summary(const std::string& id, const RunManifest& m) {
  return {{"id", id},
          {"name", m.name},
          {"backend_id", m.backend_id},
          {"model_id", m.model_id},
          {"planned_count", m.planned_count},
          {"counts",
           {{"pending", m.count(RunStatus::kPending)},
            {"done", m.count(RunStatus::kDone)},
            {"failed", m.count(RunStatus::kFailed)}}},
          {"created_at", m.created_at},
          {"updated_at", m.updated_at}};
}

}  // namespace

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  ServiceConfig& cfg = impl_->config;
  std::filesystem::path cache_dir = cfg.cache_dir ? *cfg.cache_dir : std::filesystem::path();
  if (cache_dir.empty()) {
    const std::string env = env_or_empty("PROMPTLENS_CACHE_DIR");
    cache_dir = env.empty() ? cfg.root / "cache" : std::filesystem::path(env);
  }
  impl_->cache = std::make_shared<ImageCache>(cache_dir);
  auto tokenizer = std::make_shared<WhitespaceTokenizer>();
  auto generator = std::make_shared<Generator>(impl_->cache, tokenizer);
  generator->register_backend(std::make_shared<SyntheticBackend>());
  const std::string url = cfg.backend_url.empty() ? backend_url_from_env() : cfg.backend_url;
  if (!url.empty()) generator->register_backend(std::make_shared<HttpDiffusionBackend>(std::make_shared<AdapterClient>(url)));
  auto metrics = std::make_shared<MetricSuite>(cfg.metric_config);
  sessions_ = std::make_shared<SessionManager>(cfg, generator, metrics);

  httplib::Server& srv = impl_->server;
  auto sessions = sessions_;
  auto cache = impl_->cache;
  const ServiceConfig snapshot = cfg;

  srv.Get("/api/health", guarded([sessions](const httplib::Request&, httplib::Response& res) {
            nlohmann::json backends = nlohmann::json::array();
            for (const char* id : {"synthetic", "http"}) {
              if (sessions->generator().has_backend(id)) backends.push_back(id);
            }
            send_json(res, 200, {{"status", "ok"}, {"version", toolkit_version()}, {"backends", backends}});
          }));

  srv.Post("/api/sessions", guarded([sessions](const httplib::Request& req, httplib::Response& res) {
             const auto body = nlohmann::json::parse(req.body);
             if (!body.contains("base_prompt") || !body.at("base_prompt").is_string()) {
               throw Error(ErrorCode::kInvalidArgument, "base_prompt (string) is required");
             }
             const std::uint64_t seed = body.value("seed", std::uint64_t{0});
             const Session s = sessions->create(body.at("base_prompt").get<std::string>(), seed,
                                                body.value("spec", nlohmann::json()));
             send_json(res, 201, to_json(s));
           }));

  srv.Get("/api/sessions", guarded([sessions](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, page(req, sessions->list(), [](const Session& s) { return to_json(s); }));
          }));

  srv.Get(R"(/api/sessions/([^/]+))", guarded([sessions](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, to_json(sessions->get(req.matches[1])));
          }));

  srv.Post(R"(/api/sessions/([^/]+)/probes)",
           guarded([sessions](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             sessions->get(id);  // 404 before validating the body
             const auto body = nlohmann::json::parse(req.body);
             if (!body.contains("modifier") || !body.at("modifier").is_string()) {
               throw Error(ErrorCode::kInvalidArgument, "modifier (string) is required");
             }
             if (!body.contains("category") || !body.at("category").is_string()) {
               throw Error(ErrorCode::kInvalidArgument, "category (string) is required");
             }
             const ProbeRecord p = sessions->probe(id, body.at("modifier").get<std::string>(),
                                                   category_from_string(body.at("category").get<std::string>()),
                                                   body.value("repetition_count", 1));
             send_json(res, 201, to_json(p));
           }));

  srv.Get(R"(/api/images/([^/]+))", guarded([cache](const httplib::Request& req, httplib::Response& res) {
            const std::string hash = req.matches[1];
            if (!is_hex_digest(hash) || !cache->contains_image(hash)) {
              throw Error(ErrorCode::kNotFound, "no image " + hash);
            }
            std::ifstream in(cache->image_path(hash), std::ios::binary);
            std::ostringstream bytes;
            bytes << in.rdbuf();
            res.status = 200;
            res.set_header("Cache-Control", "public, max-age=31536000, immutable");
            res.set_header("ETag", "\"" + hash + "\"");
            res.set_content(bytes.str(), "image/png");
          }));

  auto list_runs = [snapshot] {
    std::vector<std::pair<std::string, RunManifest>> runs;
    if (!std::filesystem::is_directory(snapshot.runs_dir)) return runs;
    std::vector<std::filesystem::path> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(snapshot.runs_dir)) {
      if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      try {
        runs.emplace_back(d.filename().string(), RunManifest::load(d / "manifest.json"));
      } catch (const Error&) {
        // Skip directories whose manifest is mid-write or malformed.
      }
    }
    return runs;
  };
  auto run_dir = [snapshot](const std::string& id) {
    const auto dir = snapshot.runs_dir / id;
    if (!is_safe_name(id) || !std::filesystem::exists(dir / "manifest.json")) {
      throw Error(ErrorCode::kNotFound, "no run '" + id + "'");
    }
    return dir;
  };

  srv.Get("/api/runs", guarded([list_runs](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, page(req, list_runs(), [](const auto& r) { return run_summary(r.first, r.second); }));
          }));

  srv.Get(R"(/api/runs/([^/]+))", guarded([run_dir](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            const RunManifest m = RunManifest::load(run_dir(id) / "manifest.json");
            nlohmann::json j = run_summary(id, m);
            j["config"] = m.config;
            j["provenance"] = m.provenance;
            j["toolkit_version"] = m.toolkit_version;
            send_json(res, 200, j);
          }));

  srv.Get(R"(/api/runs/([^/]+)/observations)",
          guarded([run_dir](const httplib::Request& req, httplib::Response& res) {
            const auto dir = run_dir(req.matches[1]);
            std::optional<ModifierCategory> category;
            std::optional<MetricId> metric;
            if (req.has_param("category") && !req.get_param_value("category").empty()) {
              category = category_from_string(req.get_param_value("category"));
            }
            if (req.has_param("metric") && !req.get_param_value("metric").empty()) {
              metric = metric_from_string(req.get_param_value("metric"));
            }
            std::vector<PairObservation> selected;
            if (std::filesystem::exists(dir / "observations.jsonl")) {
              for (auto& o : ResultStore::read(dir / "observations.jsonl")) {
                if (category && o.category != *category) continue;
                if (metric && !o.has(*metric)) continue;
                selected.push_back(std::move(o));
              }
            }
            send_json(res, 200, page(req, selected, [](const PairObservation& o) { return nlohmann::json(o); }));
          }));

  if (cfg.static_dir && std::filesystem::is_directory(*cfg.static_dir)) {
    srv.set_mount_point("/", cfg.static_dir->string());
  }
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->bound = true;
  return bound;
}

void Service::serve() {
  if (!impl_->bound) throw Error(ErrorCode::kIoError, "serve() called before bind()");
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace promptlens
