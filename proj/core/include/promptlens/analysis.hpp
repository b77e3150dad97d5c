#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptlens/metrics/metric_id.hpp"
#include "promptlens/observation.hpp"

namespace promptlens {

struct Distribution {
  MetricId metric = MetricId::kLpips;
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1), 0 when n == 1

  /// counts / (n * bin width), so the histogram integrates to 1.
  std::vector<double> density() const;
};

/// Half-open bins [e_i, e_{i+1}) with the last bin closed. Without an
/// explicit count the Freedman-Diaconis rule is used, falling back to 20 bins
/// when the IQR is zero. A requested range is widened to cover the data; a
/// constant sample gets the range [v - 0.5, v + 0.5]. Throws kEmptyInput or
/// kInvalidArgument (bin_count < 1).
Distribution build_distribution(std::span<const double> values, std::optional<int> bin_count = std::nullopt,
                                std::optional<std::pair<double, double>> range = std::nullopt,
                                MetricId metric = MetricId::kLpips);

double mean_of(std::span<const double> values);
double sample_std(std::span<const double> values);
/// Linear-interpolation quantile of an ascending-sorted sample.
double quantile_sorted(std::span<const double> sorted, double q);

struct MetricStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
  std::size_t excluded = 0;  // observations in the category missing this metric
  Distribution distribution;
};

struct CategoryStats {
  ModifierCategory category = ModifierCategory::kDescriptor;
  std::map<MetricId, MetricStats> metrics;
};

struct Aggregation {
  std::vector<CategoryStats> categories;  // category order, empty ones omitted
  std::vector<std::string> warnings;
};

/// Means of similarity-oriented scores per category and metric. Throws
/// kNoCompleteObservations when no category has any score.
Aggregation aggregate_by_category(const std::vector<PairObservation>& observations,
                                  const std::vector<MetricId>& metrics);

struct ModeReport {
  MetricId metric = MetricId::kLpips;
  int mode_count = 0;
  std::vector<double> mode_locations;
  double bandwidth = 0.0;
  double prominence_threshold = 0.1;
  std::size_t n = 0;
  bool low_confidence = false;  // n < 30
  std::vector<double> grid;
  std::vector<double> density;
};

/// Gaussian KDE (Silverman bandwidth) on a 512-point grid over [min, max];
/// modes are interior local maxima whose prominence is at least
/// `prominence_threshold` times the peak density. Throws kInsufficientData
/// when `values` is empty.
ModeReport detect_modes(std::span<const double> values, double prominence_threshold = 0.1,
                        MetricId metric = MetricId::kLpips, int grid_points = 512);

double silverman_bandwidth(std::span<const double> values);

struct RepetitionPoint {
  int repetition_count = 1;
  double mean_similarity = 0.0;
  std::size_t n = 0;
};

struct RepetitionCurve {
  MetricId metric = MetricId::kLpips;
  std::vector<RepetitionPoint> points;  // ascending count
  std::vector<int> missing_counts;      // expected but absent
};

/// Throws kNoObservations when no observation carries `metric`.
RepetitionCurve repetition_curve(const std::vector<PairObservation>& observations, MetricId metric,
                                 const std::vector<int>& expected_counts = {1, 2, 3, 5});

struct CorrelationReport {
  MetricId x_metric = MetricId::kClipFlatCosine;
  MetricId y_metric = MetricId::kLpips;
  double pearson_r = 0.0;
  double spearman_rho = 0.0;
  std::size_t n = 0;
  std::vector<std::pair<double, double>> scatter_points;
};

double pearson(std::span<const double> x, std::span<const double> y);
/// Pearson over average ranks.
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> values);

/// Throws kInsufficientData (n < 3), kZeroVariance, kDimensionMismatch.
CorrelationReport correlate(std::vector<std::pair<double, double>> points, MetricId x_metric, MetricId y_metric);
/// Pairs observations holding both metrics, in similarity orientation.
CorrelationReport correlate(const std::vector<PairObservation>& observations, MetricId x_metric, MetricId y_metric);

struct CorrelationComparison {
  enum class Verdict { kFirstStronger, kSecondStronger, kTie };
  Verdict verdict = Verdict::kTie;
  MetricId first_x = MetricId::kClipFlatCosine;
  MetricId second_x = MetricId::kSbertCosine;
  MetricId y_metric = MetricId::kLpips;
  double first_abs_r = 0.0;
  double second_abs_r = 0.0;
  double difference = 0.0;  // first_abs_r - second_abs_r
  std::size_t first_n = 0;
  std::size_t second_n = 0;
  bool significance_eligible = false;  // both n >= 30

  std::string describe() const;
};

/// Orders two reports by |pearson_r|. Throws kMetricMismatch when the y
/// metrics differ.
CorrelationComparison compare_correlations(const CorrelationReport& a, const CorrelationReport& b);

/// Everything `promptlens analyze` computes for one store.
struct AnalysisBundle {
  std::vector<MetricId> metrics;
  Aggregation aggregation;
  std::map<MetricId, ModeReport> lighting_modes;
  std::map<MetricId, RepetitionCurve> repetition_curves;
  std::vector<CorrelationReport> correlations;
  std::optional<CorrelationComparison> comparison;
  std::size_t observation_count = 0;
  std::size_t partial_count = 0;
  std::vector<std::string> notes;
};

AnalysisBundle analyze_observations(const std::vector<PairObservation>& observations,
                                    const std::vector<MetricId>& metrics);

nlohmann::json to_json(const Distribution& d);
nlohmann::json to_json(const CategoryStats& s);
nlohmann::json to_json(const ModeReport& m);
nlohmann::json to_json(const RepetitionCurve& c);
nlohmann::json to_json(const CorrelationReport& c);
nlohmann::json to_json(const CorrelationComparison& c);
nlohmann::json to_json(const AnalysisBundle& b);

}  // namespace promptlens
