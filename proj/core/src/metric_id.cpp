#include "promptlens/metrics/metric_id.hpp"

#include "promptlens/error.hpp"

namespace promptlens {

std::string_view to_string(MetricId metric) {
  switch (metric) {
    case MetricId::kLpips: return "lpips";
    case MetricId::kVggPerceptual: return "vgg_perceptual";
    case MetricId::kWatsonDft: return "watson_dft";
    case MetricId::kClipFlatCosine: return "clip_flat_cosine";
    case MetricId::kSbertCosine: return "sbert_cosine";
  }
  return "lpips";
}

std::string_view display_name(MetricId metric) {
  switch (metric) {
    case MetricId::kLpips: return "LPIPS";
    case MetricId::kVggPerceptual: return "VGG";
    case MetricId::kWatsonDft: return "Watson-DFT";
    case MetricId::kClipFlatCosine: return "CLIP";
    case MetricId::kSbertCosine: return "S-BERT";
  }
  return "LPIPS";
}

std::optional<MetricId> parse_metric(std::string_view text) {
  for (MetricId m : kAllMetrics) {
    if (text == to_string(m)) return m;
  }
  return std::nullopt;
}

MetricId metric_from_string(std::string_view text) {
  if (auto m = parse_metric(text)) return *m;
  throw Error(ErrorCode::kInvalidArgument, "unknown metric '" + std::string(text) + "'");
}

std::string_view to_string(Orientation orientation) {
  return orientation == Orientation::kDistance ? "distance" : "similarity";
}

MetricScore to_similarity(const MetricScore& score) {
  if (score.orientation != Orientation::kDistance) {
    throw Error(ErrorCode::kInvalidArgument, "to_similarity expects a distance score");
  }
  return MetricScore{score.metric, 1.0 - score.value, Orientation::kSimilarity};
}

MetricScore to_distance(const MetricScore& score) {
  if (score.orientation != Orientation::kSimilarity) {
    throw Error(ErrorCode::kInvalidArgument, "to_distance expects a similarity score");
  }
  return MetricScore{score.metric, 1.0 - score.value, Orientation::kDistance};
}

MetricScore as_similarity(const MetricScore& score) {
  return score.orientation == Orientation::kDistance ? to_similarity(score) : score;
}

void to_json(nlohmann::json& j, const MetricScore& score) {
  j = nlohmann::json{{"metric", to_string(score.metric)},
                     {"value", score.value},
                     {"orientation", to_string(score.orientation)}};
}

void from_json(const nlohmann::json& j, MetricScore& score) {
  score.metric = metric_from_string(j.at("metric").get<std::string>());
  score.value = j.at("value").get<double>();
  const auto orientation = j.at("orientation").get<std::string>();
  if (orientation == "distance") {
    score.orientation = Orientation::kDistance;
  } else if (orientation == "similarity") {
    score.orientation = Orientation::kSimilarity;
  } else {
    throw Error(ErrorCode::kParseError, "unknown orientation '" + orientation + "'");
  }
}

}  // namespace promptlens
