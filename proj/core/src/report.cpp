#include "promptlens/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "promptlens/error.hpp"

namespace promptlens {

namespace {

constexpr double kPlotWidth = 640;
constexpr double kPlotHeight = 400;
constexpr double kLeft = 64;
constexpr double kRight = 24;
constexpr double kTop = 44;
constexpr double kBottom = 56;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string num(double v, const char* fmt = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  std::string s(buf);
  if (s.starts_with("-") && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string escape_md(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Linear data-to-pixel mapping with padded, non-degenerate ranges.
struct Axis {
  double lo = 0, hi = 1, px_lo = 0, px_hi = 1;
  double map(double v) const { return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo); }
};

Axis make_axis(double lo, double hi, double px_lo, double px_hi, double pad_fraction = 0.0) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = (hi - lo) * pad_fraction;
  return {lo - pad, hi + pad, px_lo, px_hi};
}

class Svg {
 public:
  Svg(const std::string& title) {
    out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kPlotWidth, "%.0f") + "\" height=\"" +
            num(kPlotHeight, "%.0f") + "\" viewBox=\"0 0 " + num(kPlotWidth, "%.0f") + " " +
            num(kPlotHeight, "%.0f") + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out_ += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    text(kPlotWidth / 2, 24, title, "middle", 15);
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, const std::string& extra = "") {
    out_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
            "\" stroke=\"" + stroke + "\"" + extra + "/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, double opacity) {
    out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
            "\" fill=\"" + fill + "\" fill-opacity=\"" + num(opacity) + "\" stroke=\"" + fill + "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    out_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" + fill +
            "\" fill-opacity=\"0.7\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    out_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) out_ += ' ';
      out_ += num(pts[i].first) + "," + num(pts[i].second);
    }
    out_ += "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 12,
            const std::string& extra = "") {
    out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\" font-size=\"" +
            std::to_string(size) + "\"" + extra + ">" + escape_xml(s) + "</text>\n";
  }

  void axes(const Axis& x, const Axis& y, const std::string& x_label, const std::string& y_label) {
    const double x0 = kLeft, x1 = kPlotWidth - kRight, y0 = kPlotHeight - kBottom, y1 = kTop;
    line(x0, y0, x1, y0, "black");
    line(x0, y0, x0, y1, "black");
    for (int i = 0; i <= 5; ++i) {
      const double xv = x.lo + (x.hi - x.lo) * i / 5.0;
      const double px = x.map(xv);
      line(px, y0, px, y0 + 5, "black");
      text(px, y0 + 18, num(xv), "middle", 11);
      const double yv = y.lo + (y.hi - y.lo) * i / 5.0;
      const double py = y.map(yv);
      line(x0 - 5, py, x0, py, "black");
      text(x0 - 8, py + 4, num(yv), "end", 11);
    }
    text((x0 + x1) / 2, kPlotHeight - 14, x_label, "middle", 12);
    text(16, (y0 + y1) / 2, y_label, "middle", 12,
         " transform=\"rotate(-90 16 " + num((y0 + y1) / 2) + ")\"");
  }

  void legend(const std::vector<std::pair<std::string, std::string>>& entries) {
    double y = kTop + 8;
    for (const auto& [label, color] : entries) {
      rect(kPlotWidth - kRight - 150, y - 9, 12, 12, color, 0.6);
      text(kPlotWidth - kRight - 132, y + 1, label);
      y += 18;
    }
  }

  std::string str() const { return out_ + "</svg>\n"; }

 private:
  std::string out_;
};

std::string metric_axis_label(MetricId m) { return std::string(display_name(m)) + " similarity"; }

void write_text(const std::filesystem::path& path, const std::string& content, std::vector<std::filesystem::path>& list) {
  write_file_atomic(path, content);
  list.push_back(path);
}

struct ModifierKey {
  ModifierCategory category;
  std::string text;
  auto operator<=>(const ModifierKey&) const = default;
};

}  // namespace

std::string format_3dp(double value) { return num(value, "%.3f"); }

std::string histogram_svg(const Distribution& first, const std::optional<HistogramSeries>& second,
                          const std::string& first_label, const std::string& title) {
  std::vector<std::pair<std::string, const Distribution*>> series{{first_label, &first}};
  if (second) {
    if (!second->distribution) throw Error(ErrorCode::kInvalidArgument, "histogram series without a distribution");
    if (second->distribution->metric != first.metric) {
      throw Error(ErrorCode::kMetricMismatch, "histograms of " + std::string(to_string(first.metric)) + " and " +
                                                  std::string(to_string(second->distribution->metric)));
    }
    series.emplace_back(second->label, second->distribution);
  }
  double lo = first.bin_edges.empty() ? 0 : first.bin_edges.front();
  double hi = first.bin_edges.empty() ? 1 : first.bin_edges.back();
  double top = 0;
  for (const auto& [label, d] : series) {
    if (d->n == 0 || d->counts.empty()) throw Error(ErrorCode::kEmptyInput, "histogram of an empty distribution");
    lo = std::min(lo, d->bin_edges.front());
    hi = std::max(hi, d->bin_edges.back());
    for (double v : d->density()) top = std::max(top, v);
  }
  Svg svg(title);
  const Axis x = make_axis(lo, hi, kLeft, kPlotWidth - kRight);
  const Axis y = make_axis(0, top * 1.05, kPlotHeight - kBottom, kTop);
  svg.axes(x, y, metric_axis_label(first.metric), "density");
  std::vector<std::pair<std::string, std::string>> legend;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const Distribution& d = *series[s].second;
    const std::string color = kPalette[s % std::size(kPalette)];
    const auto density = d.density();
    for (std::size_t i = 0; i < d.counts.size(); ++i) {
      const double x0 = x.map(d.bin_edges[i]);
      const double x1 = x.map(d.bin_edges[i + 1]);
      const double y0 = y.map(density[i]);
      svg.rect(x0, y0, std::max(0.0, x1 - x0), y.map(0) - y0, color, 0.45);
    }
    legend.emplace_back(series[s].first + " (n=" + std::to_string(d.n) + ")", color);
  }
  svg.legend(legend);
  return svg.str();
}

std::string scatter_svg(const CorrelationReport& report, const std::string& title) {
  if (report.scatter_points.empty()) throw Error(ErrorCode::kEmptyInput, "scatter plot without points");
  double xlo = report.scatter_points.front().first, xhi = xlo;
  double ylo = report.scatter_points.front().second, yhi = ylo;
  for (const auto& [px, py] : report.scatter_points) {
    xlo = std::min(xlo, px);
    xhi = std::max(xhi, px);
    ylo = std::min(ylo, py);
    yhi = std::max(yhi, py);
  }
  Svg svg(title);
  const Axis x = make_axis(xlo, xhi, kLeft, kPlotWidth - kRight, 0.05);
  const Axis y = make_axis(ylo, yhi, kPlotHeight - kBottom, kTop, 0.05);
  svg.axes(x, y, metric_axis_label(report.x_metric), metric_axis_label(report.y_metric));
  for (const auto& [px, py] : report.scatter_points) svg.circle(x.map(px), y.map(py), 3, kPalette[0]);
  svg.text(kLeft + 10, kTop + 14,
           "r = " + format_3dp(report.pearson_r) + "   rho = " + format_3dp(report.spearman_rho) +
               "   n = " + std::to_string(report.n));
  return svg.str();
}

std::string repetition_svg(const std::vector<RepetitionCurve>& curves, const std::string& title) {
  double xlo = 1, xhi = 1, ylo = 1, yhi = 0;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      xhi = std::max(xhi, static_cast<double>(p.repetition_count));
      ylo = std::min(ylo, p.mean_similarity);
      yhi = std::max(yhi, p.mean_similarity);
    }
  }
  if (yhi < ylo) throw Error(ErrorCode::kEmptyInput, "repetition plot without points");
  Svg svg(title);
  const Axis x = make_axis(xlo, xhi, kLeft, kPlotWidth - kRight, 0.05);
  const Axis y = make_axis(ylo, yhi, kPlotHeight - kBottom, kTop, 0.1);
  svg.axes(x, y, "repetition count", "mean similarity");
  std::vector<std::pair<std::string, std::string>> legend;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const std::string color = kPalette[i % std::size(kPalette)];
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : curves[i].points) {
      pts.emplace_back(x.map(p.repetition_count), y.map(p.mean_similarity));
      svg.circle(pts.back().first, pts.back().second, 4, color);
    }
    svg.polyline(pts, color);
    legend.emplace_back(std::string(display_name(curves[i].metric)), color);
  }
  svg.legend(legend);
  return svg.str();
}

std::string density_svg(const ModeReport& modes, const std::string& title) {
  Svg svg(title);
  if (modes.grid.empty()) {
    const Axis x = make_axis(modes.mode_locations.front(), modes.mode_locations.front(), kLeft, kPlotWidth - kRight);
    const Axis y = make_axis(0, 1, kPlotHeight - kBottom, kTop);
    svg.axes(x, y, metric_axis_label(modes.metric), "density");
    svg.line(x.map(modes.mode_locations.front()), y.map(0), x.map(modes.mode_locations.front()), y.map(1), kPalette[1]);
    return svg.str();
  }
  const double top = *std::max_element(modes.density.begin(), modes.density.end());
  const Axis x = make_axis(modes.grid.front(), modes.grid.back(), kLeft, kPlotWidth - kRight);
  const Axis y = make_axis(0, top * 1.05, kPlotHeight - kBottom, kTop);
  svg.axes(x, y, metric_axis_label(modes.metric), "density");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < modes.grid.size(); ++i) pts.emplace_back(x.map(modes.grid[i]), y.map(modes.density[i]));
  svg.polyline(pts, kPalette[0]);
  for (double m : modes.mode_locations) {
    svg.line(x.map(m), y.map(0), x.map(m), y.map(top), kPalette[1], " stroke-dasharray=\"4 3\"");
  }
  svg.text(kLeft + 10, kTop + 14,
           std::to_string(modes.mode_count) + " mode(s), bandwidth " + num(modes.bandwidth, "%.4f") +
               (modes.low_confidence ? ", low confidence" : ""));
  return svg.str();
}

Image contact_sheet(const Image& base, const std::vector<Image>& variants, const std::vector<std::string>& labels,
                    int cell_size, const std::string& base_label) {
  if (variants.empty()) throw Error(ErrorCode::kInvalidArgument, "contact sheet needs at least one variant");
  if (labels.size() != variants.size()) {
    throw Error(ErrorCode::kLabelMismatch, std::to_string(labels.size()) + " labels for " +
                                               std::to_string(variants.size()) + " variants");
  }
  constexpr int kLabelBand = 28;
  constexpr int kGap = 4;
  const int cells = static_cast<int>(variants.size()) + 1;
  cv::Mat sheet(cell_size + kLabelBand, cells * cell_size + (cells - 1) * kGap, CV_8UC3, cv::Scalar(255, 255, 255));
  auto place = [&](const Image& img, int slot, const std::string& label) {
    cv::Mat src(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.rgb.data()));
    cv::Mat scaled;
    cv::resize(src, scaled, cv::Size(cell_size, cell_size), 0, 0, cv::INTER_AREA);
    const int x = slot * (cell_size + kGap);
    scaled.copyTo(sheet(cv::Rect(x, 0, cell_size, cell_size)));
    std::string text = label;
    const double scale = 0.4;
    int baseline = 0;
    while (!text.empty() && cv::getTextSize(text, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &baseline).width > cell_size - 4) {
      text.pop_back();
    }
    if (text.size() < label.size() && text.size() > 3) text.replace(text.size() - 3, 3, "...");
    cv::putText(sheet, text, cv::Point(x + 2, cell_size + 18), cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(0, 0, 0), 1,
                cv::LINE_AA);
  };
  place(base, 0, base_label);
  for (std::size_t i = 0; i < variants.size(); ++i) place(variants[i], static_cast<int>(i) + 1, labels[i]);

  Image out(sheet.cols, sheet.rows);
  std::copy(sheet.data, sheet.data + out.rgb.size(), out.rgb.begin());
  return out;
}

std::string category_table_markdown(const Aggregation& aggregation, const std::vector<MetricId>& metrics) {
  std::string out = "| Category |";
  std::string rule = "|---|";
  for (MetricId m : metrics) {
    out += " " + std::string(display_name(m)) + " |";
    rule += "---:|";
  }
  out += " n |\n" + rule + "---:|\n";
  for (const auto& s : aggregation.categories) {
    out += "| " + std::string(display_name(s.category)) + " |";
    std::size_t n = 0;
    for (MetricId m : metrics) {
      auto it = s.metrics.find(m);
      out += it == s.metrics.end() ? " - |" : " " + format_3dp(it->second.mean) + " |";
      if (it != s.metrics.end()) n = std::max(n, it->second.n);
    }
    out += " " + std::to_string(n) + " |\n";
  }
  return out;
}

std::string category_table_csv(const Aggregation& aggregation, const std::vector<MetricId>& metrics) {
  std::string out = "category";
  for (MetricId m : metrics) out += "," + std::string(to_string(m));
  out += "\n";
  for (const auto& s : aggregation.categories) {
    out += std::string(to_string(s.category));
    for (MetricId m : metrics) {
      auto it = s.metrics.find(m);
      out += "," + (it == s.metrics.end() ? std::string() : format_3dp(it->second.mean));
    }
    out += "\n";
  }
  return out;
}

std::string category_stats_csv(const Aggregation& aggregation) {
  std::string out = "category,metric,mean,std,n,excluded\n";
  for (const auto& s : aggregation.categories) {
    for (const auto& [m, ms] : s.metrics) {
      out += std::string(to_string(s.category)) + "," + std::string(to_string(m)) + "," + num(ms.mean, "%.9f") + "," +
             num(ms.std, "%.9f") + "," + std::to_string(ms.n) + "," + std::to_string(ms.excluded) + "\n";
    }
  }
  return out;
}

std::string observations_csv(const std::vector<PairObservation>& observations, const std::vector<MetricId>& metrics) {
  std::string out = "run_id,category,modifier,repetition_count,seed,base_prompt,probe_prompt,base_hash,probe_hash";
  for (MetricId m : metrics) out += "," + std::string(to_string(m));
  out += ",partial\n";
  for (const auto& o : observations) {
    out += o.run_id + "," + std::string(to_string(o.category)) + "," +
           csv_field(o.probe_variant.modifier ? o.probe_variant.modifier->text : "") + "," +
           std::to_string(o.repetition_count) + "," + std::to_string(o.seed) + "," + csv_field(o.base_variant.composed) +
           "," + csv_field(o.probe_variant.composed) + "," + o.base_hash + "," + o.probe_hash;
    for (MetricId m : metrics) {
      auto it = o.scores.find(m);
      out += "," + (it == o.scores.end() ? std::string() : num(it->second.value, "%.9f"));
    }
    out += o.partial() ? ",1\n" : ",0\n";
  }
  return out;
}

ReportBundle summary_report(const ReportInputs& inputs, const std::filesystem::path& output_dir) {
  if (inputs.observations.empty()) throw Error(ErrorCode::kNoObservations, "the store holds no observations");
  const AnalysisBundle analysis = analyze_observations(inputs.observations, inputs.metrics);

  ReportBundle bundle;
  bundle.output_dir = output_dir;
  std::filesystem::create_directories(output_dir / "plots");
  std::filesystem::create_directories(output_dir / "tables");

  std::string md = "# " + inputs.title + "\n\n";
  md += std::to_string(analysis.observation_count) + " observations";
  if (analysis.partial_count > 0) md += " (" + std::to_string(analysis.partial_count) + " partial)";
  md += ". Image metrics are shown as similarity = 1 - distance; raw distances stay in the store.\n\n";

  md += "## Average similarity by category\n\n" + category_table_markdown(analysis.aggregation, inputs.metrics) + "\n";
  md += "Standard deviations:\n\n| Category |";
  std::string rule = "|---|";
  for (MetricId m : inputs.metrics) {
    md += " " + std::string(display_name(m)) + " |";
    rule += "---:|";
  }
  md += "\n" + rule + "\n";
  for (const auto& s : analysis.aggregation.categories) {
    md += "| " + std::string(display_name(s.category)) + " |";
    for (MetricId m : inputs.metrics) {
      auto it = s.metrics.find(m);
      md += it == s.metrics.end() ? " - |" : " " + format_3dp(it->second.std) + " |";
    }
    md += "\n";
  }
  md += "\n";
  write_text(output_dir / "tables" / "category_table.csv", category_table_csv(analysis.aggregation, inputs.metrics),
             bundle.tables);
  write_text(output_dir / "tables" / "category_stats.csv", category_stats_csv(analysis.aggregation), bundle.tables);
  write_text(output_dir / "tables" / "observations.csv", observations_csv(inputs.observations, inputs.metrics),
             bundle.tables);

  md += "## Distributions\n\n";
  for (MetricId m : inputs.metrics) {
    const Distribution* descriptor = nullptr;
    const Distribution* noun = nullptr;
    for (const auto& s : analysis.aggregation.categories) {
      auto it = s.metrics.find(m);
      if (it == s.metrics.end()) continue;
      const std::string file = "hist_" + std::string(to_string(m)) + "_" + std::string(to_string(s.category)) + ".svg";
      write_text(output_dir / "plots" / file,
                 histogram_svg(it->second.distribution, std::nullopt, std::string(display_name(s.category)),
                               std::string(display_name(s.category)) + ": " + std::string(display_name(m))),
                 bundle.plots);
      md += "![" + std::string(display_name(s.category)) + " " + std::string(display_name(m)) + "](plots/" + file + ")\n";
      if (s.category == ModifierCategory::kDescriptor) descriptor = &it->second.distribution;
      if (s.category == ModifierCategory::kNoun) noun = &it->second.distribution;
    }
    if (descriptor && noun) {
      const std::string file = "hist_" + std::string(to_string(m)) + "_descriptor_vs_noun.svg";
      write_text(output_dir / "plots" / file,
                 histogram_svg(*descriptor, HistogramSeries{"Nouns", noun}, "Descriptors",
                               "Descriptor vs noun: " + std::string(display_name(m))),
                 bundle.plots);
      md += "![Descriptor vs noun " + std::string(display_name(m)) + "](plots/" + file + ")\n";
    }
    md += "\n";
  }

  if (!analysis.lighting_modes.empty()) {
    md += "## Lighting modes\n\n| Metric | Modes | Locations | Bandwidth | n |\n|---|---:|---|---:|---:|\n";
    for (const auto& [m, r] : analysis.lighting_modes) {
      std::string locations;
      for (std::size_t i = 0; i < r.mode_locations.size(); ++i) {
        locations += (i ? ", " : "") + format_3dp(r.mode_locations[i]);
      }
      md += "| " + std::string(display_name(m)) + " | " + std::to_string(r.mode_count) +
            (r.low_confidence ? " (low confidence)" : "") + " | " + locations + " | " + num(r.bandwidth, "%.4f") +
            " | " + std::to_string(r.n) + " |\n";
      const std::string file = "modes_lighting_" + std::string(to_string(m)) + ".svg";
      write_text(output_dir / "plots" / file, density_svg(r, "Lighting: " + std::string(display_name(m)) + " density"),
                 bundle.plots);
    }
    md += "\n";
    for (const auto& [m, r] : analysis.lighting_modes) {
      md += "![Lighting " + std::string(display_name(m)) + "](plots/modes_lighting_" + std::string(to_string(m)) +
            ".svg)\n";
    }
    md += "\n";
  }

  if (!analysis.repetition_curves.empty()) {
    md += "## Repetition\n\n| Repetitions |";
    std::string rep_rule = "|---:|";
    std::set<int> counts;
    std::vector<RepetitionCurve> curves;
    for (const auto& [m, c] : analysis.repetition_curves) {
      md += " " + std::string(display_name(m)) + " |";
      rep_rule += "---:|";
      for (const auto& p : c.points) counts.insert(p.repetition_count);
      curves.push_back(c);
    }
    md += " n |\n" + rep_rule + "---:|\n";
    for (int k : counts) {
      md += "| " + std::to_string(k) + " |";
      std::size_t n = 0;
      for (const auto& c : curves) {
        auto it = std::find_if(c.points.begin(), c.points.end(),
                               [&](const RepetitionPoint& p) { return p.repetition_count == k; });
        md += it == c.points.end() ? " - |" : " " + format_3dp(it->mean_similarity) + " |";
        if (it != c.points.end()) n = std::max(n, it->n);
      }
      md += " " + std::to_string(n) + " |\n";
    }
    const auto& missing = curves.front().missing_counts;
    if (!missing.empty()) {
      md += "\nMissing repetition counts:";
      for (int k : missing) md += " " + std::to_string(k);
      md += "\n";
    }
    write_text(output_dir / "plots" / "repetition.svg", repetition_svg(curves, "Similarity by repetition count"),
               bundle.plots);
    md += "\n![Repetition](plots/repetition.svg)\n\n";
  }

  if (!analysis.correlations.empty()) {
    md += "## Text vs image similarity\n\n| Text metric | Image metric | Pearson r | Spearman rho | n |\n"
          "|---|---|---:|---:|---:|\n";
    for (const auto& c : analysis.correlations) {
      md += "| " + std::string(display_name(c.x_metric)) + " | " + std::string(display_name(c.y_metric)) + " | " +
            format_3dp(c.pearson_r) + " | " + format_3dp(c.spearman_rho) + " | " + std::to_string(c.n) + " |\n";
    }
    md += "\n";
    if (analysis.comparison) md += analysis.comparison->describe() + ".\n\n";
    for (const auto& c : analysis.correlations) {
      const std::string file =
          "scatter_" + std::string(to_string(c.x_metric)) + "_vs_" + std::string(to_string(c.y_metric)) + ".svg";
      write_text(output_dir / "plots" / file,
                 scatter_svg(c, std::string(display_name(c.x_metric)) + " vs " + std::string(display_name(c.y_metric))),
                 bundle.plots);
      md += "![" + std::string(display_name(c.x_metric)) + " scatter](plots/" + file + ")\n";
    }
    md += "\n";
  }

  std::optional<MetricId> image_metric;
  for (MetricId m : inputs.metrics) {
    if (is_image_metric(m)) {
      image_metric = m;
      break;
    }
  }
  const MetricId rank_metric = image_metric.value_or(inputs.metrics.front());
  {
    std::map<ModifierKey, std::vector<double>> per_modifier;
    for (const auto& o : inputs.observations) {
      if (!o.probe_variant.modifier || o.repetition_count != 1) continue;
      if (auto s = o.similarity(rank_metric)) per_modifier[{o.category, o.probe_variant.modifier->text}].push_back(*s);
    }
    if (!per_modifier.empty()) {
      md += "## Modifiers ranked by image change\n\nMean " + std::string(display_name(rank_metric)) +
            " similarity per modifier, most disruptive first.\n\n| Category | Modifier | Similarity | n |\n"
            "|---|---|---:|---:|\n";
      std::vector<std::tuple<ModifierCategory, double, std::string, std::size_t>> rows;
      for (const auto& [key, values] : per_modifier) {
        rows.emplace_back(key.category, mean_of(values), key.text, values.size());
      }
      std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
        return std::get<2>(a) < std::get<2>(b);
      });
      for (const auto& [category, mean, text, n] : rows) {
        md += "| " + std::string(display_name(category)) + " | " + escape_md(text) + " | " + format_3dp(mean) + " | " +
              std::to_string(n) + " |\n";
      }
      md += "\n";
    }
  }

  if (inputs.cache) {
    std::string sheets_md;
    for (ModifierCategory category : kAllCategories) {
      const PairObservation* first = nullptr;
      for (const auto& o : inputs.observations) {
        if (o.category == category) {
          first = &o;
          break;
        }
      }
      if (!first) continue;
      std::vector<Image> variants;
      std::vector<std::string> labels;
      try {
        for (const auto& o : inputs.observations) {
          if (o.category != category || o.base_hash != first->base_hash || o.seed != first->seed ||
              o.repetition_count != 1 || variants.size() >= inputs.sheet_variants) {
            continue;
          }
          variants.push_back(inputs.cache->read_image(o.probe_hash));
          std::string label = o.probe_variant.modifier ? o.probe_variant.modifier->text : o.probe_variant.composed;
          if (auto s = o.similarity(rank_metric)) label += " " + format_3dp(*s);
          labels.push_back(label);
        }
        if (variants.empty()) continue;
        const Image sheet = contact_sheet(inputs.cache->read_image(first->base_hash), variants, labels);
        std::filesystem::create_directories(output_dir / "sheets");
        const std::string file = std::string(to_string(category)) + "_" + first->base_hash.substr(0, 12) + ".png";
        const auto png = encode_png(sheet);
        write_file_atomic(output_dir / "sheets" / file, std::string(png.begin(), png.end()));
        bundle.sheets.push_back(output_dir / "sheets" / file);
        sheets_md += "**" + std::string(display_name(category)) + "**: \"" + escape_md(first->base_variant.composed) +
                     "\", seed " + std::to_string(first->seed) + "\n\n![" + std::string(display_name(category)) +
                     "](sheets/" + file + ")\n\n";
      } catch (const Error& e) {
        sheets_md += "Contact sheet for " + std::string(display_name(category)) + " skipped: " + e.what() + "\n\n";
      }
    }
    if (!sheets_md.empty()) md += "## Contact sheets\n\n" + sheets_md;
  }

  if (!analysis.aggregation.warnings.empty() || !analysis.notes.empty()) {
    md += "## Notes\n\n";
    for (const auto& w : analysis.aggregation.warnings) md += "- " + w + "\n";
    for (const auto& n : analysis.notes) md += "- " + n + "\n";
    md += "\n";
  }

  bundle.summary = output_dir / "report.md";
  write_file_atomic(bundle.summary, md);
  write_file_atomic(output_dir / "analysis.json", to_json(analysis).dump(1) + "\n");
  return bundle;
}

}  // namespace promptlens
