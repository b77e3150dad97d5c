#include "promptlens/image.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "promptlens/error.hpp"
#include "promptlens/hash.hpp"

namespace promptlens {

std::string content_hash(const Image& image) {
  const std::string header = "RGB8 " + std::to_string(image.width) + "x" + std::to_string(image.height) + "\n";
  std::vector<std::uint8_t> buffer;
  buffer.reserve(header.size() + image.rgb.size());
  buffer.insert(buffer.end(), header.begin(), header.end());
  buffer.insert(buffer.end(), image.rgb.begin(), image.rgb.end());
  return sha256_hex(buffer);
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw Error(ErrorCode::kInvalidArgument, "cannot encode empty image");
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", bgr, out, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw Error(ErrorCode::kIoError, "png encoding failed");
  }
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw Error(ErrorCode::kParseError, "empty image buffer");
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::kParseError, std::string("image decode failed: ") + e.what());
  }
  if (bgr.empty()) throw Error(ErrorCode::kParseError, "image decode failed");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image image(rgb.cols, rgb.rows);
  for (int y = 0; y < rgb.rows; ++y) {
    std::copy_n(rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3, image.at(0, y));
  }
  return image;
}

void GenerationSpec::validate() const {
  if (backend_id.empty()) throw Error(ErrorCode::kInvalidArgument, "backend_id is empty");
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 1");
  if (guidance_scale < 0.0) throw Error(ErrorCode::kInvalidArgument, "guidance_scale must be >= 0");
  if (width < 1 || height < 1) throw Error(ErrorCode::kInvalidArgument, "image size must be positive");
}

void to_json(nlohmann::json& j, const GenerationSpec& spec) {
  j = nlohmann::json{{"backend_id", spec.backend_id}, {"model_id", spec.model_id},
                     {"seed", spec.seed},             {"scheduler_id", spec.scheduler_id},
                     {"steps", spec.steps},           {"guidance_scale", spec.guidance_scale},
                     {"width", spec.width},           {"height", spec.height}};
}

void from_json(const nlohmann::json& j, GenerationSpec& spec) {
  GenerationSpec defaults;
  spec.backend_id = j.value("backend_id", defaults.backend_id);
  spec.model_id = j.value("model_id", defaults.model_id);
  spec.seed = j.value("seed", defaults.seed);
  spec.scheduler_id = j.value("scheduler_id", defaults.scheduler_id);
  spec.steps = j.value("steps", defaults.steps);
  spec.guidance_scale = j.value("guidance_scale", defaults.guidance_scale);
  spec.width = j.value("width", defaults.width);
  spec.height = j.value("height", defaults.height);
}

bool ImageRecord::verify() const { return pixels && content_hash == promptlens::content_hash(*pixels); }

ImageRecord make_record(Image image, GenerationSpec spec, std::string prompt) {
  ImageRecord record;
  record.content_hash = content_hash(image);
  record.pixels = std::make_shared<const Image>(std::move(image));
  record.spec = std::move(spec);
  record.prompt = std::move(prompt);
  record.created_at = utc_timestamp();
  return record;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

}  // namespace promptlens
