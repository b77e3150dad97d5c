#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptlens/image.hpp"
#include "promptlens/metrics/metric_id.hpp"
#include "promptlens/metrics/perceptual.hpp"
#include "promptlens/metrics/text_encoder.hpp"
#include "promptlens/metrics/watson.hpp"

namespace promptlens {

struct MetricSuiteConfig {
  WeightSource lpips{"builtin:lpips-ref-v1", ""};
  WeightSource vgg{"builtin:vgg-ref-v1", ""};
  std::optional<std::filesystem::path> watson_config;
  /// "hashed" or "http".
  std::string text_encoders = "hashed";
  std::string adapter_url;

  static MetricSuiteConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Uniform entry point for all five metrics. Weights load lazily, exactly
/// once, on first use; afterwards the suite is safe to share across threads.
/// Image features are memoised per content hash so a base image is only
/// pushed through the networks once per run.
class MetricSuite {
 public:
  explicit MetricSuite(MetricSuiteConfig config = {});
  MetricSuite(MetricSuiteConfig config, std::shared_ptr<const ClipTextEncoder> clip,
              std::shared_ptr<const SentenceEncoder> sentence);

  /// Throws kInvalidArgument for text metrics, kDimensionMismatch,
  /// kWeightsUnavailable.
  MetricScore image_distance(const ImageRecord& a, const ImageRecord& b, MetricId metric) const;
  MetricScore image_distance(const Image& a, const Image& b, MetricId metric) const;

  /// Throws kInvalidArgument for image metrics; propagates encoder errors.
  MetricScore text_similarity(std::string_view a, std::string_view b, MetricId metric) const;
  EmbeddingMatrix text_embedding(std::string_view prompt) const;

  /// Scores every requested metric for a base/probe pair, in native orientation.
  std::map<MetricId, MetricScore> score_pair(const ImageRecord& base, const ImageRecord& probe,
                                             const std::vector<MetricId>& metrics) const;

  /// Weight digests and encoder identities, for the run manifest. Loads
  /// weights for the requested metrics.
  nlohmann::json provenance(const std::vector<MetricId>& metrics) const;

  const MetricSuiteConfig& config() const noexcept { return config_; }

 private:
  struct Networks;
  const LpipsMetric& lpips() const;
  const VggPerceptualMetric& vgg() const;
  const WatsonDftMetric& watson() const;
  double cached_distance(const ImageRecord& a, const ImageRecord& b, MetricId metric) const;

  MetricSuiteConfig config_;
  std::shared_ptr<const ClipTextEncoder> clip_;
  std::shared_ptr<const SentenceEncoder> sentence_;
  std::shared_ptr<Networks> nets_;
};

}  // namespace promptlens
