#include "promptlens/http_adapter.hpp"

#include <cstdlib>

#include <httplib.h>

#include "promptlens/error.hpp"

namespace promptlens {

AdapterClient::AdapterClient(std::string base_url, double timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  const auto scheme = base_url_.find("://");
  const auto path_start = base_url_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  host_part_ = base_url_.substr(0, path_start);
  if (path_start != std::string::npos) prefix_ = base_url_.substr(path_start);
  if (host_part_.empty()) throw Error(ErrorCode::kInvalidConfig, "adapter URL is empty");
}

AdapterClient::Response AdapterClient::post(const std::string& path, const nlohmann::json& body,
                                            ErrorCode unavailable) const {
  httplib::Client client(host_part_);
  const auto seconds = static_cast<time_t>(timeout_seconds_);
  client.set_connection_timeout(5, 0);
  client.set_read_timeout(seconds, 0);
  client.set_write_timeout(seconds, 0);
  auto result = client.Post(prefix_ + path, body.dump(), "application/json");
  if (!result) {
    throw Error(unavailable, "adapter at " + base_url_ + " unreachable: " + httplib::to_string(result.error()));
  }
  return Response{result->status, result->body, result->get_header_value("Content-Type")};
}

nlohmann::json AdapterClient::post_json(const std::string& path, const nlohmann::json& body, ErrorCode unavailable,
                                        ErrorCode failure) const {
  const Response response = post(path, body, unavailable);
  if (response.status != 200) {
    throw Error(failure, "adapter " + path + " returned HTTP " + std::to_string(response.status), response.body);
  }
  auto parsed = nlohmann::json::parse(response.body, nullptr, false);
  if (parsed.is_discarded()) throw Error(failure, "adapter " + path + " returned invalid JSON", response.body);
  return parsed;
}

std::string backend_url_from_env() {
  const char* value = std::getenv("PROMPTLENS_BACKEND_URL");
  return value ? std::string(value) : std::string();
}

HttpDiffusionBackend::HttpDiffusionBackend(std::shared_ptr<AdapterClient> client, std::string id)
    : client_(std::move(client)), id_(std::move(id)) {}

Image HttpDiffusionBackend::generate(const GenerationSpec& spec, const std::string& prompt) {
  const nlohmann::json request{{"model_id", spec.model_id},     {"seed", spec.seed},
                               {"scheduler_id", spec.scheduler_id}, {"steps", spec.steps},
                               {"guidance_scale", spec.guidance_scale}, {"width", spec.width},
                               {"height", spec.height},         {"prompt", prompt}};
  const auto response = client_->post("/generate", request, ErrorCode::kBackendUnavailable);
  if (response.status == 503) {
    throw Error(ErrorCode::kBackendUnavailable, "adapter reports unavailable", response.body);
  }
  if (response.status != 200) {
    throw Error(ErrorCode::kGenerationFailed, "adapter /generate returned HTTP " + std::to_string(response.status),
                response.body);
  }
  try {
    return decode_png(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(response.body.data()),
                                                     response.body.size()));
  } catch (const Error& e) {
    throw Error(ErrorCode::kGenerationFailed, std::string("adapter returned an undecodable image: ") + e.what());
  }
}

std::size_t HttpTokenizer::count_tokens(std::string_view text) const {
  const auto reply = client_->post_json("/tokenize", {{"text", std::string(text)}}, ErrorCode::kEncoderUnavailable,
                                        ErrorCode::kEncoderUnavailable);
  if (!reply.contains("count")) throw Error(ErrorCode::kEncoderUnavailable, "adapter /tokenize reply lacks count");
  return reply["count"].get<std::size_t>();
}

}  // namespace promptlens
