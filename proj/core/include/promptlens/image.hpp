#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace promptlens {

/// Interleaved 8-bit RGB, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width) * height; }
  std::uint8_t* at(int x, int y) noexcept { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const noexcept {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// SHA-256 over "RGB8 <w>x<h>\n" followed by the raw row-major pixel bytes.
/// Hashing decoded pixels keeps identity independent of the PNG encoder.
std::string content_hash(const Image& image);

std::vector<std::uint8_t> encode_png(const Image& image);
/// Throws kParseError when the bytes are not a decodable image.
Image decode_png(std::span<const std::uint8_t> bytes);

/// The determinism contract for one generation.
struct GenerationSpec {
  std::string backend_id = "synthetic";
  std::string model_id = "CompVis/stable-diffusion-v1-4";
  std::uint64_t seed = 0;
  std::string scheduler_id = "PNDMScheduler";
  int steps = 50;
  double guidance_scale = 7.5;
  int width = 512;
  int height = 512;

  /// Throws kInvalidArgument.
  void validate() const;

  friend bool operator==(const GenerationSpec&, const GenerationSpec&) = default;
};

void to_json(nlohmann::json& j, const GenerationSpec& spec);
void from_json(const nlohmann::json& j, GenerationSpec& spec);

struct ImageRecord {
  std::shared_ptr<const Image> pixels;
  std::string content_hash;
  GenerationSpec spec;
  std::string prompt;
  std::string created_at;  // ISO-8601 UTC

  const Image& image() const { return *pixels; }
  /// Recomputes the hash from the pixels.
  bool verify() const;
};

ImageRecord make_record(Image image, GenerationSpec spec, std::string prompt);

std::string utc_timestamp();

}  // namespace promptlens
