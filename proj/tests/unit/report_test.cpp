#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "promptlens/analysis.hpp"
#include "promptlens/error.hpp"
#include "promptlens/experiment.hpp"
#include "promptlens/report.hpp"
#include "support.hpp"

using namespace promptlens;
using testing_support::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no promptlens::Error thrown";
  return ErrorCode::kIoError;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h);
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    img.rgb[i] = r;
    img.rgb[i + 1] = g;
    img.rgb[i + 2] = b;
  }
  return img;
}

CategoryStats row(ModifierCategory c, double lpips, double vgg, double clip) {
  CategoryStats s;
  s.category = c;
  s.metrics[MetricId::kLpips].mean = lpips;
  s.metrics[MetricId::kVggPerceptual].mean = vgg;
  s.metrics[MetricId::kClipFlatCosine].mean = clip;
  for (auto& [m, st] : s.metrics) st.n = 1;
  return s;
}

std::vector<std::vector<std::string>> table_cells(const std::string& markdown) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(markdown);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("|", 0) != 0 || line.find("---") != std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line.substr(1));
    std::string cell;
    while (std::getline(ls, cell, '|')) {
      const auto a = cell.find_first_not_of(' '), b = cell.find_last_not_of(' ');
      cells.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
    }
    rows.push_back(cells);
  }
  return rows;
}

const std::vector<PairObservation>& sweep_observations(std::filesystem::path* cache_dir = nullptr) {
  static TempDir dir;
  static const std::vector<PairObservation> obs = [] {
    ExperimentConfig cfg;
    cfg.name = "report-fixture";
    cfg.base_prompts = {"A cat", "A portrait of a woman"};
    cfg.seeds = {0, 1};
    cfg.repetitions = {1, 2, 3};
    for (auto c : kAllCategories) cfg.lexicons.push_back({c, "builtin:" + std::string(to_string(c)), 4});
    cfg.generation.width = cfg.generation.height = 32;
    cfg.output_dir = dir.path() / "run";
    cfg.cache_dir = dir.path() / "cache";
    run_experiment(cfg);
    return ResultStore::read(RunPaths{cfg.output_dir}.store());
  }();
  if (cache_dir) *cache_dir = dir.path() / "cache";
  return obs;
}

}  // namespace

TEST(Format, ThreeDecimals) {
  EXPECT_EQ(format_3dp(0.6644), "0.664");
  EXPECT_EQ(format_3dp(0.6645001), "0.665");
  EXPECT_EQ(format_3dp(1.0), "1.000");
  EXPECT_EQ(format_3dp(-0.0001), "0.000");
  EXPECT_EQ(format_3dp(-0.25), "-0.250");
}

TEST(Tables, ReferenceShapeFixture) {
  Aggregation agg;
  agg.categories = {row(ModifierCategory::kDescriptor, 0.664, 0.646, 0.839),
                    row(ModifierCategory::kNoun, 0.512, 0.513, 0.200),
                    row(ModifierCategory::kArtist, 0.465, 0.530, 0.627)};
  const auto md =
      category_table_markdown(agg, {MetricId::kLpips, MetricId::kVggPerceptual, MetricId::kClipFlatCosine});
  const auto cells = table_cells(md);
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(cells[0], (std::vector<std::string>{"Category", "LPIPS", "VGG", "CLIP", "n"}));
  EXPECT_EQ(cells[1], (std::vector<std::string>{"Descriptors", "0.664", "0.646", "0.839", "1"}));
  EXPECT_EQ(cells[2], (std::vector<std::string>{"Nouns", "0.512", "0.513", "0.200", "1"}));
  EXPECT_EQ(cells[3], (std::vector<std::string>{"Artists", "0.465", "0.530", "0.627", "1"}));
  EXPECT_EQ(category_table_csv(agg, {MetricId::kLpips}), "category,lpips\ndescriptor,0.664\nnoun,0.512\nartist,0.465\n");
}

TEST(Tables, MarkdownMatchesCategoryStats) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PairObservation> obs;
    for (int i = 0; i < 20; ++i) {
      PairObservation o;
      o.run_id = "r" + std::to_string(i);
      o.category = kAllCategories[rng() % 4];
      o.scores[MetricId::kLpips] = MetricScore{MetricId::kLpips, (u(rng) + 1) / 2, Orientation::kDistance};
      o.scores[MetricId::kSbertCosine] = MetricScore{MetricId::kSbertCosine, u(rng), Orientation::kSimilarity};
      obs.push_back(o);
    }
    const std::vector<MetricId> metrics = {MetricId::kLpips, MetricId::kSbertCosine};
    const auto agg = aggregate_by_category(obs, metrics);
    const auto cells = table_cells(category_table_markdown(agg, metrics));
    ASSERT_EQ(cells.size(), agg.categories.size() + 1);
    for (std::size_t r = 0; r < agg.categories.size(); ++r) {
      for (std::size_t m = 0; m < metrics.size(); ++m) {
        const double mean = agg.categories[r].metrics.at(metrics[m]).mean;
        const double shown = std::stod(cells[r + 1][m + 1]);
        EXPECT_LE(std::fabs(shown - mean), 0.0005 + 1e-12);
        EXPECT_EQ(cells[r + 1][m + 1], format_3dp(mean));
      }
    }
  }
}

TEST(Tables, ObservationsCsvHasOneRowPerRecord) {
  const auto& obs = sweep_observations();
  const auto csv = observations_csv(obs, {MetricId::kLpips, MetricId::kClipFlatCosine});
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), obs.size() + 1);
}

TEST(Plots, HistogramErrorsAndSeries) {
  const std::vector<double> a = {0.2, 0.4, 0.4, 0.9};
  const auto da = build_distribution(a, 4, std::pair{0.0, 1.0}, MetricId::kLpips);
  auto db = build_distribution(a, 4, std::pair{0.0, 1.0}, MetricId::kLpips);
  const auto one = histogram_svg(da, std::nullopt, "Descriptors", "single");
  EXPECT_NE(one.find("<svg"), std::string::npos);
  EXPECT_NE(one.find("Descriptors"), std::string::npos);
  const auto two = histogram_svg(da, HistogramSeries{"Nouns", &db}, "Descriptors", "overlay");
  EXPECT_LT(two.find("Descriptors"), two.rfind("Nouns"));

  Distribution empty;
  EXPECT_EQ(code_of([&] { histogram_svg(empty, std::nullopt, "x", "t"); }), ErrorCode::kEmptyInput);
  db.metric = MetricId::kVggPerceptual;
  EXPECT_EQ(code_of([&] { histogram_svg(da, HistogramSeries{"Nouns", &db}, "Descriptors", "t"); }),
            ErrorCode::kMetricMismatch);
}

TEST(Plots, ScatterAnnotatesPearson) {
  const std::vector<std::pair<double, double>> pts = {{0.1, 0.2}, {0.2, 0.4}, {0.3, 0.6}};
  const auto svg = scatter_svg(correlate(pts, MetricId::kClipFlatCosine, MetricId::kLpips), "collinear");
  EXPECT_NE(svg.find("r = 1.000"), std::string::npos);
}

TEST(ContactSheet, LayoutAndErrors) {
  const auto base = solid(20, 20, 255, 0, 0);
  std::vector<Image> variants;
  std::vector<std::string> labels;
  for (int i = 0; i < 5; ++i) {
    variants.push_back(solid(20, 20, 0, 0, 255));
    labels.push_back("v" + std::to_string(i));
  }
  const auto one = contact_sheet(base, {variants[0]}, {labels[0]}, 40);
  const auto six = contact_sheet(base, variants, labels, 40);
  EXPECT_GT(six.width, one.width);
  // six cells of 40 px with 4 px gaps
  EXPECT_EQ(six.width, 6 * 40 + 5 * 4);
  EXPECT_EQ(one.width, 2 * 40 + 4);
  auto px = [&](const Image& img, int x, int y) {
    const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
    return std::array<int, 3>{img.rgb[i], img.rgb[i + 1], img.rgb[i + 2]};
  };
  EXPECT_EQ(px(six, 20, 20), (std::array<int, 3>{255, 0, 0}));
  EXPECT_EQ(px(six, 44 + 20, 20), (std::array<int, 3>{0, 0, 255}));

  EXPECT_EQ(code_of([&] { contact_sheet(base, variants, {"a"}); }), ErrorCode::kLabelMismatch);
  EXPECT_EQ(code_of([&] { contact_sheet(base, {}, {}); }), ErrorCode::kInvalidArgument);
}

TEST(Bundle, EmptyStoreIsAnError) {
  TempDir dir;
  ReportInputs in;
  in.metrics = {MetricId::kLpips};
  EXPECT_EQ(code_of([&] { summary_report(in, dir / "out"); }), ErrorCode::kNoObservations);
  EXPECT_FALSE(std::filesystem::exists(dir / "out" / "report.md"));
}

TEST(Bundle, FilesExistAndRegenerationIsByteStable) {
  std::filesystem::path cache_dir;
  const auto& obs = sweep_observations(&cache_dir);
  ImageCache cache(cache_dir);
  ReportInputs in;
  in.title = "fixture";
  in.observations = obs;
  in.metrics = {kAllMetrics.begin(), kAllMetrics.end()};
  in.cache = &cache;
  TempDir dir;
  const auto a = summary_report(in, dir / "a");
  const auto b = summary_report(in, dir / "b");
  EXPECT_TRUE(std::filesystem::exists(a.summary));
  EXPECT_FALSE(a.plots.empty());
  EXPECT_FALSE(a.tables.empty());
  EXPECT_FALSE(a.sheets.empty());
  ASSERT_EQ(a.plots.size(), b.plots.size());
  ASSERT_EQ(a.tables.size(), b.tables.size());

  std::vector<std::filesystem::path> files = {a.summary};
  files.insert(files.end(), a.plots.begin(), a.plots.end());
  files.insert(files.end(), a.tables.begin(), a.tables.end());
  files.insert(files.end(), a.sheets.begin(), a.sheets.end());
  for (const auto& f : files) {
    ASSERT_TRUE(std::filesystem::exists(f)) << f;
    const auto rel = std::filesystem::relative(f, a.output_dir);
    EXPECT_EQ(slurp(f), slurp(b.output_dir / rel)) << rel;
  }

  const auto md = slurp(a.summary);
  for (const char* heading : {"Descriptors", "Nouns", "Artists", "Lighting"}) {
    EXPECT_NE(md.find(heading), std::string::npos) << heading;
  }
  EXPECT_FALSE(std::regex_search(md, std::regex(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2})")));
}
