#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "promptlens/metrics/metric_id.hpp"
#include "promptlens/prompt.hpp"

namespace promptlens {

/// One probe: base prompt vs base + modifier, same seed and scheduler.
/// Scores are stored in native orientation; a metric that failed appears in
/// `metric_errors` instead and makes the record partial.
struct PairObservation {
  std::string run_id;
  PromptVariant base_variant;
  PromptVariant probe_variant;
  ModifierCategory category = ModifierCategory::kDescriptor;
  int repetition_count = 1;
  std::uint64_t seed = 0;
  std::string base_hash;
  std::string probe_hash;
  std::map<MetricId, MetricScore> scores;
  std::map<MetricId, std::string> metric_errors;

  bool partial() const noexcept { return !metric_errors.empty(); }
  bool has(MetricId metric) const { return scores.contains(metric); }
  /// Score for `metric` in similarity orientation, if present.
  std::optional<double> similarity(MetricId metric) const;

  friend bool operator==(const PairObservation&, const PairObservation&) = default;
};

void to_json(nlohmann::json& j, const PromptVariant& v);
void from_json(const nlohmann::json& j, PromptVariant& v);
void to_json(nlohmann::json& j, const PairObservation& o);
void from_json(const nlohmann::json& j, PairObservation& o);

}  // namespace promptlens
