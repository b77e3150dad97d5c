#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "promptlens/backend.hpp"
#include "promptlens/error.hpp"
#include "promptlens/prompt.hpp"

namespace promptlens {

/// JSON-over-HTTP client for an out-of-process model adapter.
///
/// Adapter protocol:
///   POST /generate        {model_id, seed, scheduler_id, steps, guidance_scale,
///                          width, height, prompt}          -> image/png bytes
///   POST /tokenize        {text}                            -> {count}
///   POST /encode/clip     {text}                            -> {rows, cols, data}
///   POST /encode/sentence {text}                            -> {data}
class AdapterClient {
 public:
  /// `base_url` is "http://host:port" with an optional path prefix.
  explicit AdapterClient(std::string base_url, double timeout_seconds = 600.0);

  struct Response {
    int status = 0;
    std::string body;
    std::string content_type;
  };

  /// Throws `unavailable` when the connection fails.
  Response post(const std::string& path, const nlohmann::json& body, ErrorCode unavailable) const;
  /// POST expecting a 200 JSON reply; other statuses throw `failure`.
  nlohmann::json post_json(const std::string& path, const nlohmann::json& body, ErrorCode unavailable,
                           ErrorCode failure) const;

  const std::string& base_url() const noexcept { return base_url_; }

 private:
  std::string base_url_;
  std::string host_part_;
  std::string prefix_;
  double timeout_seconds_;
};

/// Reads PROMPTLENS_BACKEND_URL; empty when unset.
std::string backend_url_from_env();

class HttpDiffusionBackend final : public DiffusionBackend {
 public:
  explicit HttpDiffusionBackend(std::shared_ptr<AdapterClient> client, std::string id = "http");

  std::string id() const override { return id_; }
  Image generate(const GenerationSpec& spec, const std::string& prompt) override;

 private:
  std::shared_ptr<AdapterClient> client_;
  std::string id_;
};

/// Delegates token counting to the adapter so the budget check uses the
/// real encoder's tokenizer.
class HttpTokenizer final : public Tokenizer {
 public:
  explicit HttpTokenizer(std::shared_ptr<AdapterClient> client) : client_(std::move(client)) {}
  std::size_t count_tokens(std::string_view text) const override;

 private:
  std::shared_ptr<AdapterClient> client_;
};

}  // namespace promptlens
