#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "promptlens/analysis.hpp"
#include "promptlens/cache.hpp"
#include "promptlens/image.hpp"

namespace promptlens {

/// Fixed three-decimal rendering used by every table ("-0.000" becomes
/// "0.000").
std::string format_3dp(double value);

struct HistogramSeries {
  std::string label;
  const Distribution* distribution = nullptr;
};

/// Overlaid density histograms. Throws kEmptyInput for an empty
/// distribution and kMetricMismatch when the metrics differ.
std::string histogram_svg(const Distribution& first, const std::optional<HistogramSeries>& second,
                          const std::string& first_label, const std::string& title);
std::string scatter_svg(const CorrelationReport& report, const std::string& title);
std::string repetition_svg(const std::vector<RepetitionCurve>& curves, const std::string& title);
std::string density_svg(const ModeReport& modes, const std::string& title);

/// One row: the base image leftmost, then each variant, labels underneath.
/// Throws kLabelMismatch when labels and variants differ in length and
/// kInvalidArgument when there are no variants.
Image contact_sheet(const Image& base, const std::vector<Image>& variants, const std::vector<std::string>& labels,
                    int cell_size = 160, const std::string& base_label = "base");

/// Markdown summary table: one row per category, one column per metric,
/// similarity means to 3 decimals.
std::string category_table_markdown(const Aggregation& aggregation, const std::vector<MetricId>& metrics);
std::string category_table_csv(const Aggregation& aggregation, const std::vector<MetricId>& metrics);
std::string category_stats_csv(const Aggregation& aggregation);
std::string observations_csv(const std::vector<PairObservation>& observations, const std::vector<MetricId>& metrics);

struct ReportBundle {
  std::filesystem::path output_dir;
  std::filesystem::path summary;
  std::vector<std::filesystem::path> plots;
  std::vector<std::filesystem::path> tables;
  std::vector<std::filesystem::path> sheets;
};

struct ReportInputs {
  std::string title = "promptlens report";
  std::vector<PairObservation> observations;
  std::vector<MetricId> metrics;
  /// Needed for contact sheets; sheets are skipped without it.
  ImageCache* cache = nullptr;
  std::size_t sheet_variants = 6;
};

/// Writes report.md, tables/*.csv, plots/*.svg and sheets/*.png under
/// `output_dir`. Throws kNoObservations for an empty store.
ReportBundle summary_report(const ReportInputs& inputs, const std::filesystem::path& output_dir);

}  // namespace promptlens
