#include "promptlens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "promptlens/error.hpp"

namespace promptlens {

namespace {

constexpr int kFallbackBins = 20;
constexpr int kMaxAutoBins = 512;
constexpr std::size_t kConfidentSampleSize = 30;

std::vector<double> sorted_copy(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  std::sort(out.begin(), out.end());
  return out;
}

int freedman_diaconis_bins(const std::vector<double>& sorted, double lo, double hi) {
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  if (!(iqr > 0.0)) return kFallbackBins;
  const double width = 2.0 * iqr / std::cbrt(static_cast<double>(sorted.size()));
  const double bins = std::ceil((hi - lo) / width);
  return static_cast<int>(std::clamp(bins, 1.0, static_cast<double>(kMaxAutoBins)));
}

double gaussian_kde_at(const std::vector<double>& values, double x, double h) {
  const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * M_PI));
  double sum = 0.0;
  for (double v : values) {
    const double z = (x - v) / h;
    sum += std::exp(-0.5 * z * z);
  }
  return sum * norm;
}

// Peak height above the higher of the two bases reached before climbing to a
// taller point on either side.
double prominence(const std::vector<double>& d, std::size_t peak) {
  double left_min = d[peak];
  for (std::size_t i = peak; i-- > 0;) {
    if (d[i] > d[peak]) break;
    left_min = std::min(left_min, d[i]);
  }
  double right_min = d[peak];
  for (std::size_t i = peak + 1; i < d.size(); ++i) {
    if (d[i] > d[peak]) break;
    right_min = std::min(right_min, d[i]);
  }
  return d[peak] - std::max(left_min, right_min);
}

std::string format_number(double v, int precision = 3) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(precision);
  out << v;
  return out.str();
}

}  // namespace

std::vector<double> Distribution::density() const {
  std::vector<double> out(counts.size(), 0.0);
  if (n == 0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out[i] = static_cast<double>(counts[i]) / (static_cast<double>(n) * (bin_edges[i + 1] - bin_edges[i]));
  }
  return out;
}

double mean_of(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "mean of an empty sample");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::kEmptyInput, "quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Distribution build_distribution(std::span<const double> values, std::optional<int> bin_count,
                                std::optional<std::pair<double, double>> range, MetricId metric) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "cannot build a distribution from no values");
  if (bin_count && *bin_count < 1) throw Error(ErrorCode::kInvalidArgument, "bin_count must be at least 1");
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "distribution values must be finite");
  }
  const std::vector<double> sorted = sorted_copy(values);
  double lo = sorted.front();
  double hi = sorted.back();
  if (range) {
    lo = std::min(lo, range->first);
    hi = std::max(hi, range->second);
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const int bins = bin_count ? *bin_count : freedman_diaconis_bins(sorted, lo, hi);

  Distribution d;
  d.metric = metric;
  d.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i < bins; ++i) d.bin_edges[i] = lo + (hi - lo) * i / bins;
  d.bin_edges[bins] = hi;
  d.counts.assign(bins, 0);
  for (double v : sorted) {
    auto idx = static_cast<std::size_t>(std::upper_bound(d.bin_edges.begin(), d.bin_edges.end(), v) -
                                        d.bin_edges.begin()) - 1;
    d.counts[std::min(idx, d.counts.size() - 1)] += 1;
  }
  d.n = values.size();
  d.mean = mean_of(values);
  d.std = sample_std(values);
  return d;
}

Aggregation aggregate_by_category(const std::vector<PairObservation>& observations,
                                  const std::vector<MetricId>& metrics) {
  Aggregation out;
  for (ModifierCategory category : kAllCategories) {
    std::size_t in_category = 0;
    for (const auto& o : observations) in_category += o.category == category;
    if (in_category == 0) continue;

    CategoryStats stats;
    stats.category = category;
    for (MetricId metric : metrics) {
      std::vector<double> values;
      for (const auto& o : observations) {
        if (o.category != category) continue;
        if (auto s = o.similarity(metric)) values.push_back(*s);
      }
      if (values.empty()) {
        out.warnings.push_back(std::string(display_name(category)) + ": no " + std::string(display_name(metric)) +
                               " scores");
        continue;
      }
      MetricStats ms;
      ms.n = values.size();
      ms.excluded = in_category - values.size();
      ms.mean = mean_of(values);
      ms.std = sample_std(values);
      ms.distribution = build_distribution(values, std::nullopt, std::nullopt, metric);
      if (ms.excluded > 0) {
        out.warnings.push_back(std::string(display_name(category)) + ": " + std::to_string(ms.excluded) +
                               " observation(s) excluded from " + std::string(display_name(metric)));
      }
      stats.metrics.emplace(metric, std::move(ms));
    }
    if (stats.metrics.empty()) {
      out.warnings.push_back(std::string(display_name(category)) + " omitted: no complete observations");
      continue;
    }
    out.categories.push_back(std::move(stats));
  }
  if (out.categories.empty()) {
    throw Error(ErrorCode::kNoCompleteObservations, "no category has any scored observation");
  }
  return out;
}

double silverman_bandwidth(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const std::vector<double> sorted = sorted_copy(values);
  const double sigma = sample_std(values);
  const double iqr_sigma = (quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25)) / 1.34;
  double spread = std::min(sigma, iqr_sigma);
  if (!(spread > 0.0)) spread = std::max(sigma, iqr_sigma);
  return 0.9 * spread * std::pow(static_cast<double>(values.size()), -0.2);
}

ModeReport detect_modes(std::span<const double> values, double prominence_threshold, MetricId metric,
                        int grid_points) {
  if (values.empty()) throw Error(ErrorCode::kInsufficientData, "mode detection needs at least one value");
  if (grid_points < 3) throw Error(ErrorCode::kInvalidArgument, "grid needs at least 3 points");
  ModeReport r;
  r.metric = metric;
  r.n = values.size();
  r.prominence_threshold = prominence_threshold;
  r.low_confidence = values.size() < kConfidentSampleSize;

  const std::vector<double> sorted = sorted_copy(values);
  r.bandwidth = silverman_bandwidth(values);
  if (!(r.bandwidth > 0.0) || sorted.front() == sorted.back()) {
    r.mode_count = 1;
    r.mode_locations = {sorted.front()};
    return r;
  }

  const double lo = sorted.front();
  const double hi = sorted.back();
  r.grid.resize(grid_points);
  r.density.resize(grid_points);
  for (int i = 0; i < grid_points; ++i) {
    r.grid[i] = lo + (hi - lo) * i / (grid_points - 1);
    r.density[i] = gaussian_kde_at(sorted, r.grid[i], r.bandwidth);
  }
  const double peak = *std::max_element(r.density.begin(), r.density.end());
  for (int i = 1; i + 1 < grid_points; ++i) {
    const bool rising = r.density[i] > r.density[i - 1];
    const bool not_falling_after = r.density[i] >= r.density[i + 1];
    if (rising && not_falling_after && prominence(r.density, i) >= prominence_threshold * peak) {
      r.mode_locations.push_back(r.grid[i]);
    }
  }
  if (r.mode_locations.empty()) {
    const auto top = std::max_element(r.density.begin(), r.density.end()) - r.density.begin();
    r.mode_locations.push_back(r.grid[top]);
  }
  r.mode_count = static_cast<int>(r.mode_locations.size());
  return r;
}

RepetitionCurve repetition_curve(const std::vector<PairObservation>& observations, MetricId metric,
                                 const std::vector<int>& expected_counts) {
  std::map<int, std::vector<double>> by_count;
  for (const auto& o : observations) {
    if (auto s = o.similarity(metric)) by_count[o.repetition_count].push_back(*s);
  }
  if (by_count.empty()) {
    throw Error(ErrorCode::kNoObservations, "no observations carry " + std::string(to_string(metric)));
  }
  RepetitionCurve curve;
  curve.metric = metric;
  for (const auto& [count, values] : by_count) curve.points.push_back({count, mean_of(values), values.size()});
  for (int c : expected_counts) {
    if (!by_count.contains(c)) curve.missing_counts.push_back(c);
  }
  return curve;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kDimensionMismatch, "x and y differ in length");
  if (x.size() < 2) throw Error(ErrorCode::kInsufficientData, "correlation needs at least two points");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw Error(ErrorCode::kZeroVariance, "one axis is constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

CorrelationReport correlate(std::vector<std::pair<double, double>> points, MetricId x_metric, MetricId y_metric) {
  if (points.size() < 3) {
    throw Error(ErrorCode::kInsufficientData,
                "correlation needs at least 3 complete observations, got " + std::to_string(points.size()));
  }
  std::vector<double> x, y;
  x.reserve(points.size());
  y.reserve(points.size());
  for (const auto& [a, b] : points) {
    x.push_back(a);
    y.push_back(b);
  }
  CorrelationReport r;
  r.x_metric = x_metric;
  r.y_metric = y_metric;
  r.pearson_r = pearson(x, y);
  r.spearman_rho = spearman(x, y);
  r.n = points.size();
  r.scatter_points = std::move(points);
  return r;
}

CorrelationReport correlate(const std::vector<PairObservation>& observations, MetricId x_metric, MetricId y_metric) {
  std::vector<std::pair<double, double>> points;
  for (const auto& o : observations) {
    auto x = o.similarity(x_metric);
    auto y = o.similarity(y_metric);
    if (x && y) points.emplace_back(*x, *y);
  }
  return correlate(std::move(points), x_metric, y_metric);
}

std::string CorrelationComparison::describe() const {
  const std::string a(display_name(first_x));
  const std::string b(display_name(second_x));
  const std::string y(display_name(y_metric));
  std::string text;
  if (verdict == Verdict::kTie) {
    text = a + " and " + b + " correlate equally with " + y + " (|r| = " + format_number(first_abs_r) + ")";
  } else {
    const bool first = verdict == Verdict::kFirstStronger;
    text = (first ? a : b) + " correlates more strongly with " + y + " than " + (first ? b : a) + ": |r| " +
           format_number(first ? first_abs_r : second_abs_r) + " vs " + format_number(first ? second_abs_r : first_abs_r) +
           ", difference " + format_number(std::abs(difference));
  }
  text += " (n = " + std::to_string(first_n) + " and " + std::to_string(second_n) + ")";
  if (!significance_eligible) text += "; samples too small to discuss significance";
  return text;
}

CorrelationComparison compare_correlations(const CorrelationReport& a, const CorrelationReport& b) {
  if (a.y_metric != b.y_metric) {
    throw Error(ErrorCode::kMetricMismatch, "reports correlate against " + std::string(to_string(a.y_metric)) +
                                                " and " + std::string(to_string(b.y_metric)));
  }
  CorrelationComparison c;
  c.first_x = a.x_metric;
  c.second_x = b.x_metric;
  c.y_metric = a.y_metric;
  c.first_abs_r = std::abs(a.pearson_r);
  c.second_abs_r = std::abs(b.pearson_r);
  c.difference = c.first_abs_r - c.second_abs_r;
  c.first_n = a.n;
  c.second_n = b.n;
  c.significance_eligible = a.n >= kConfidentSampleSize && b.n >= kConfidentSampleSize;
  if (std::abs(c.difference) <= 1e-12) {
    c.verdict = CorrelationComparison::Verdict::kTie;
  } else {
    c.verdict = c.difference > 0 ? CorrelationComparison::Verdict::kFirstStronger
                                 : CorrelationComparison::Verdict::kSecondStronger;
  }
  return c;
}

AnalysisBundle analyze_observations(const std::vector<PairObservation>& observations,
                                    const std::vector<MetricId>& metrics) {
  AnalysisBundle b;
  b.metrics = metrics;
  b.observation_count = observations.size();
  for (const auto& o : observations) b.partial_count += o.partial();
  b.aggregation = aggregate_by_category(observations, metrics);

  std::vector<PairObservation> lighting;
  for (const auto& o : observations) {
    if (o.category == ModifierCategory::kLighting) lighting.push_back(o);
  }
  bool repeated = false;
  for (const auto& o : observations) repeated = repeated || o.repetition_count > 1;

  for (MetricId metric : metrics) {
    if (!lighting.empty() && is_image_metric(metric)) {
      std::vector<double> values;
      for (const auto& o : lighting) {
        if (auto s = o.similarity(metric)) values.push_back(*s);
      }
      if (!values.empty()) b.lighting_modes.emplace(metric, detect_modes(values, 0.1, metric));
    }
    if (repeated) {
      try {
        b.repetition_curves.emplace(metric, repetition_curve(observations, metric));
      } catch (const Error& e) {
        b.notes.push_back(e.what());
      }
    }
  }

  std::optional<MetricId> image_axis;
  for (MetricId m : metrics) {
    if (is_image_metric(m)) {
      image_axis = m;
      break;
    }
  }
  if (image_axis) {
    for (MetricId text : {MetricId::kClipFlatCosine, MetricId::kSbertCosine}) {
      if (std::find(metrics.begin(), metrics.end(), text) == metrics.end()) continue;
      try {
        b.correlations.push_back(correlate(observations, text, *image_axis));
      } catch (const Error& e) {
        b.notes.push_back(std::string(display_name(text)) + " vs " + std::string(display_name(*image_axis)) + ": " +
                          e.what());
      }
    }
    if (b.correlations.size() == 2) b.comparison = compare_correlations(b.correlations[0], b.correlations[1]);
  }
  return b;
}

nlohmann::json to_json(const Distribution& d) {
  return {{"metric", to_string(d.metric)}, {"bin_edges", d.bin_edges}, {"counts", d.counts},
          {"density", d.density()},        {"n", d.n},                 {"mean", d.mean},
          {"std", d.std}};
}

nlohmann::json to_json(const CategoryStats& s) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [metric, ms] : s.metrics) {
    metrics[std::string(to_string(metric))] = {{"mean", ms.mean},
                                               {"std", ms.std},
                                               {"n", ms.n},
                                               {"excluded", ms.excluded},
                                               {"distribution", to_json(ms.distribution)}};
  }
  return {{"category", to_string(s.category)}, {"metrics", metrics}};
}

nlohmann::json to_json(const ModeReport& m) {
  return {{"metric", to_string(m.metric)},
          {"mode_count", m.mode_count},
          {"mode_locations", m.mode_locations},
          {"bandwidth", m.bandwidth},
          {"prominence_threshold", m.prominence_threshold},
          {"n", m.n},
          {"low_confidence", m.low_confidence}};
}

nlohmann::json to_json(const RepetitionCurve& c) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : c.points) {
    points.push_back({{"repetition_count", p.repetition_count}, {"mean_similarity", p.mean_similarity}, {"n", p.n}});
  }
  return {{"metric", to_string(c.metric)}, {"points", points}, {"missing_counts", c.missing_counts}};
}

nlohmann::json to_json(const CorrelationReport& c) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& [x, y] : c.scatter_points) points.push_back({x, y});
  return {{"x_metric", to_string(c.x_metric)}, {"y_metric", to_string(c.y_metric)}, {"pearson_r", c.pearson_r},
          {"spearman_rho", c.spearman_rho},    {"n", c.n},                          {"scatter_points", points}};
}

nlohmann::json to_json(const CorrelationComparison& c) {
  const char* verdict = c.verdict == CorrelationComparison::Verdict::kTie             ? "tie"
                        : c.verdict == CorrelationComparison::Verdict::kFirstStronger ? "first_stronger"
                                                                                      : "second_stronger";
  return {{"verdict", verdict},
          {"first_x", to_string(c.first_x)},
          {"second_x", to_string(c.second_x)},
          {"y_metric", to_string(c.y_metric)},
          {"first_abs_r", c.first_abs_r},
          {"second_abs_r", c.second_abs_r},
          {"difference", c.difference},
          {"first_n", c.first_n},
          {"second_n", c.second_n},
          {"significance_eligible", c.significance_eligible},
          {"summary", c.describe()}};
}

nlohmann::json to_json(const AnalysisBundle& b) {
  nlohmann::json j;
  j["metrics"] = nlohmann::json::array();
  for (MetricId m : b.metrics) j["metrics"].push_back(to_string(m));
  j["observation_count"] = b.observation_count;
  j["partial_count"] = b.partial_count;
  j["categories"] = nlohmann::json::array();
  for (const auto& s : b.aggregation.categories) j["categories"].push_back(to_json(s));
  j["warnings"] = b.aggregation.warnings;
  j["lighting_modes"] = nlohmann::json::object();
  for (const auto& [m, r] : b.lighting_modes) j["lighting_modes"][std::string(to_string(m))] = to_json(r);
  j["repetition_curves"] = nlohmann::json::object();
  for (const auto& [m, c] : b.repetition_curves) j["repetition_curves"][std::string(to_string(m))] = to_json(c);
  j["correlations"] = nlohmann::json::array();
  for (const auto& c : b.correlations) j["correlations"].push_back(to_json(c));
  j["comparison"] = b.comparison ? to_json(*b.comparison) : nlohmann::json(nullptr);
  j["notes"] = b.notes;
  return j;
}

}  // namespace promptlens
