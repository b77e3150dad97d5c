#pragma once

#include <array>
#include <optional>
#include <string_view>

#include <nlohmann/json.hpp>

namespace promptlens {

enum class MetricId { kLpips, kVggPerceptual, kWatsonDft, kClipFlatCosine, kSbertCosine };

inline constexpr std::array<MetricId, 5> kAllMetrics = {MetricId::kLpips, MetricId::kVggPerceptual,
                                                        MetricId::kWatsonDft, MetricId::kClipFlatCosine,
                                                        MetricId::kSbertCosine};

enum class Orientation { kDistance, kSimilarity };

std::string_view to_string(MetricId metric);
std::string_view display_name(MetricId metric);  // "LPIPS", "VGG", ...
std::optional<MetricId> parse_metric(std::string_view text);
/// Throws kInvalidArgument.
MetricId metric_from_string(std::string_view text);
std::string_view to_string(Orientation orientation);

constexpr bool is_image_metric(MetricId m) noexcept {
  return m == MetricId::kLpips || m == MetricId::kVggPerceptual || m == MetricId::kWatsonDft;
}
constexpr bool is_text_metric(MetricId m) noexcept { return !is_image_metric(m); }
constexpr Orientation native_orientation(MetricId m) noexcept {
  return is_image_metric(m) ? Orientation::kDistance : Orientation::kSimilarity;
}

struct MetricScore {
  MetricId metric = MetricId::kLpips;
  double value = 0.0;
  Orientation orientation = Orientation::kDistance;

  friend bool operator==(const MetricScore&, const MetricScore&) = default;
};

/// similarity = 1 - distance. Requires distance orientation.
MetricScore to_similarity(const MetricScore& score);
/// Inverse of to_similarity. Requires similarity orientation.
MetricScore to_distance(const MetricScore& score);
/// Converts distances, passes similarities through.
MetricScore as_similarity(const MetricScore& score);

void to_json(nlohmann::json& j, const MetricScore& score);
void from_json(const nlohmann::json& j, MetricScore& score);

}  // namespace promptlens
