// Acceptance run: one PASS/FAIL/SKIP line per criterion, exit status 1 when
// any gating criterion fails.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "promptlens/analysis.hpp"
#include "promptlens/error.hpp"
#include "promptlens/experiment.hpp"
#include "promptlens/hash.hpp"
#include "promptlens/metrics/cosine.hpp"
#include "promptlens/report.hpp"
#include "promptlens/synthetic_backend.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace promptlens;

namespace {

struct Outcome {
  enum class State { kPass, kFail, kSkip } state = State::kFail;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::State::kPass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::State::kFail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

class Scratch {
 public:
  Scratch() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("promptlens-acceptance-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

Image random_image(std::mt19937_64& rng, int w, int h) {
  Image img(w, h);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(byte(rng));
  return img;
}

std::vector<PairObservation> sorted(std::vector<PairObservation> v) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.run_id < b.run_id; });
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  return static_cast<std::size_t>(std::count(std::istreambuf_iterator<char>(in), {}, '\n'));
}

pid_t spawn(const std::vector<std::string>& args, const fs::path& stdout_path) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, stdout_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw std::runtime_error("cannot spawn " + args[0]);
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

// Category sweep store shared by P4 and P9.
fs::path g_sweep_dir;

Outcome p1_determinism() {
  SyntheticBackend backend;
  std::mt19937_64 rng(2024);
  const auto words = builtin_lexicon(ModifierCategory::kNoun).entries();
  int identical = 0;
  for (int i = 0; i < 100; ++i) {
    GenerationSpec spec;
    spec.width = spec.height = 64;
    spec.seed = rng();
    const std::string prompt = "A " + words[rng() % words.size()].text + ", " + words[rng() % words.size()].text;
    identical += content_hash(backend.generate(spec, prompt)) == content_hash(backend.generate(spec, prompt));
  }
  return check(identical == 100, std::to_string(identical) + "/100 identical content hashes");
}

Outcome p2_metric_properties() {
  MetricSuite suite;
  std::mt19937_64 rng(7);
  const std::vector<MetricId> image_metrics = {MetricId::kLpips, MetricId::kVggPerceptual, MetricId::kWatsonDft};
  std::size_t asymmetric = 0, negative = 0, identity = 0;
  double worst_identity = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Image a = random_image(rng, 64, 64), b = random_image(rng, 64, 64);
    for (MetricId m : image_metrics) {
      const double ab = suite.image_distance(a, b, m).value;
      const double ba = suite.image_distance(b, a, m).value;
      const double aa = suite.image_distance(a, a, m).value;
      asymmetric += ab != ba;
      negative += ab < 0.0;
      worst_identity = std::max(worst_identity, std::fabs(aa));
      identity += std::fabs(aa) > 1e-6;
    }
  }
  std::size_t cosine_out = 0;
  std::normal_distribution<double> g;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> u(768), v(768);
    for (auto& x : u) x = g(rng);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = (i % 3 == 0) ? -u[k] * 2.5 : (i % 3 == 1 ? u[k] : g(rng));
    const double c = cosine_similarity(std::span<const double>(u), std::span<const double>(v));
    cosine_out += c < -1.0 - 1e-12 || c > 1.0 + 1e-12;
  }
  return check(asymmetric + negative + identity + cosine_out == 0,
               "1000 pairs x 3 image metrics: asymmetric " + std::to_string(asymmetric) + ", negative " +
                   std::to_string(negative) + ", max |d(a,a)| " + sci(worst_identity) +
                   ", cosine out of range " + std::to_string(cosine_out));
}

Outcome p3_oracles() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng() % 1024;
    std::vector<double> u(n), v(n);
    for (auto& x : u) x = g(rng) * std::pow(10.0, static_cast<double>(rng() % 7) - 3.0);
    for (auto& x : v) x = g(rng);
    long double dot = 0, nu = 0, nv = 0;
    for (std::size_t k = 0; k < n; ++k) {
      dot += static_cast<long double>(u[k]) * v[k];
      nu += static_cast<long double>(u[k]) * u[k];
      nv += static_cast<long double>(v[k]) * v[k];
    }
    const double oracle = static_cast<double>(dot / (std::sqrt(nu) * std::sqrt(nv)));
    worst = std::max(worst, std::fabs(cosine_similarity(std::span<const double>(u), std::span<const double>(v)) - oracle));
  }
  int exact = 0;
  std::uniform_real_distribution<double> uni(-1.0, 2.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> values(1 + rng() % 300);
    for (auto& x : values) x = std::round(uni(rng) * 40.0) / 40.0;
    const auto d = build_distribution(values, 1 + static_cast<int>(rng() % 25));
    std::vector<std::size_t> counts(d.counts.size(), 0);
    for (double x : values) {
      for (std::size_t b = 0; b < counts.size(); ++b) {
        const bool last = b + 1 == counts.size();
        if (x >= d.bin_edges[b] && (x < d.bin_edges[b + 1] || (last && x <= d.bin_edges[b + 1]))) {
          ++counts[b];
          break;
        }
      }
    }
    exact += counts == d.counts;
  }
  return check(worst < 1e-9 && exact == 100,
               "cosine max |delta| " + sci(worst) + "; histogram exact " + std::to_string(exact) + "/100");
}

Outcome p4_category_direction(const Scratch& scratch) {
  auto cfg = preset("category_sweep");
  cfg.output_dir = scratch / "category_sweep";
  cfg.cache_dir = scratch / "cache";
  const auto summary = run_experiment(cfg);
  g_sweep_dir = cfg.output_dir;
  const auto manifest = RunManifest::load(RunPaths{cfg.output_dir}.manifest());
  const auto agg = aggregate_by_category(ResultStore::read(RunPaths{cfg.output_dir}.store()), {MetricId::kLpips});
  std::map<ModifierCategory, double> mean;
  for (const auto& c : agg.categories) mean[c.category] = c.metrics.at(MetricId::kLpips).mean;
  const double d = mean[ModifierCategory::kDescriptor], n = mean[ModifierCategory::kNoun],
               a = mean[ModifierCategory::kArtist];
  return check(manifest.planned_count == 96 && summary.failed == 0 && d > n && d > a,
               std::to_string(manifest.planned_count) + " generations; LPIPS similarity descriptor " + fmt(d, 3) +
                   ", noun " + fmt(n, 3) + ", artist " + fmt(a, 3));
}

Outcome p5_repetition(const Scratch& scratch) {
  auto cfg = preset("repetition_sweep");
  cfg.output_dir = scratch / "repetition_sweep";
  cfg.cache_dir = scratch / "cache";
  run_experiment(cfg);
  const auto curve = repetition_curve(ResultStore::read(RunPaths{cfg.output_dir}.store()), MetricId::kLpips);
  bool monotone = curve.points.size() == 4;
  std::string shown;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    if (i > 0 && curve.points[i].mean_similarity > curve.points[i - 1].mean_similarity) monotone = false;
    shown += (i ? ", " : "") + std::string("x") + std::to_string(curve.points[i].repetition_count) + " " +
             fmt(curve.points[i].mean_similarity, 3);
  }
  return check(monotone, "mean LPIPS similarity " + shown);
}

Outcome p6_bimodality() {
  int two = 0, one = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(500 + trial);
    std::normal_distribution<double> lo(0.50, 0.03), hi(0.75, 0.03), mid(0.62, 0.03);
    std::vector<double> mix, single;
    for (int i = 0; i < 250; ++i) {
      mix.push_back(lo(rng));
      mix.push_back(hi(rng));
    }
    for (int i = 0; i < 500; ++i) single.push_back(mid(rng));
    const auto r = detect_modes(mix);
    two += r.mode_count == 2 && std::fabs(r.mode_locations[0] - 0.50) <= 0.03 &&
           std::fabs(r.mode_locations[1] - 0.75) <= 0.03;
    one += detect_modes(single).mode_count == 1;
  }
  return check(two >= 19 && one >= 19,
               "bimodal recovered " + std::to_string(two) + "/20; unimodal control " + std::to_string(one) + "/20");
}

std::vector<std::pair<double, double>> planted(double r, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = g(rng);
    pts.emplace_back(x, r * x + std::sqrt(1 - r * r) * g(rng));
  }
  return pts;
}

Outcome p7_correlation() {
  const auto strong = correlate(planted(0.9, 200, 1), MetricId::kClipFlatCosine, MetricId::kLpips);
  const auto weak = correlate(planted(0.4, 200, 2), MetricId::kSbertCosine, MetricId::kLpips);
  const auto cmp = compare_correlations(strong, weak);
  return check(std::fabs(strong.pearson_r - 0.9) <= 0.05 &&
                   cmp.verdict == CorrelationComparison::Verdict::kFirstStronger,
               "planted 0.9 -> r " + fmt(strong.pearson_r, 3) + "; planted 0.4 -> r " + fmt(weak.pearson_r, 3) +
                   "; verdict " + cmp.describe());
}

Outcome p8_resume(const Scratch& scratch) {
  const char* cli = PROMPTLENS_CLI;
  const fs::path out = scratch / "p8_killed", clean = scratch / "p8_clean", warm = scratch / "p8_warm";
  const fs::path log = scratch / "p8.log";
  auto args = [&](const fs::path& o, const fs::path& cache) {
    return std::vector<std::string>{cli, "run", "category_sweep", "-o", o.string(), "--cache-dir", cache.string(),
                                    "-j", "1", "-q", "--json"};
  };

  const pid_t pid = spawn(args(out, scratch / "p8_cache_a"), log);
  const std::size_t target = 45;  // half of the 90 pair observations
  std::size_t at_kill = 0;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::minutes(3);
  while (std::chrono::steady_clock::now() < deadline) {
    at_kill = line_count(out / "observations.jsonl");
    if (at_kill >= target) break;
    if (waitpid(pid, nullptr, WNOHANG) == pid) return fail("run finished before it could be killed");
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  kill(pid, SIGKILL);
  wait_exit(pid);
  if (at_kill == 0 || at_kill >= 90) return fail("kill point not reached (" + std::to_string(at_kill) + " records)");

  if (wait_exit(spawn(args(out, scratch / "p8_cache_a"), log)) != 0) return fail("resume run failed");
  if (wait_exit(spawn(args(clean, scratch / "p8_cache_b"), log)) != 0) return fail("uninterrupted run failed");
  const auto resumed = sorted(ResultStore::read(out / "observations.jsonl"));
  const auto reference = sorted(ResultStore::read(clean / "observations.jsonl"));

  if (wait_exit(spawn(args(warm, scratch / "p8_cache_b"), log)) != 0) return fail("warm run failed");
  const auto summary = nlohmann::json::parse(slurp(log));
  const auto invocations = summary.at("backend_invocations").get<std::uint64_t>();

  return check(resumed == reference && resumed.size() == 90 && invocations == 0,
               "killed at " + std::to_string(at_kill) + "/90 records; resumed store " +
                   (resumed == reference ? "equals" : "differs from") + " uninterrupted (" +
                   std::to_string(resumed.size()) + " records); warm-cache backend invocations " +
                   std::to_string(invocations));
}

Outcome p9_report(const Scratch& scratch) {
  if (g_sweep_dir.empty()) return fail("category sweep store unavailable");
  const auto obs = ResultStore::read(RunPaths{g_sweep_dir}.store());
  const std::vector<MetricId> metrics = {kAllMetrics.begin(), kAllMetrics.end()};
  const auto agg = aggregate_by_category(obs, metrics);

  std::size_t cells = 0, mismatched = 0;
  std::istringstream md(category_table_markdown(agg, metrics));
  std::string line;
  std::size_t row = 0;
  while (std::getline(md, line)) {
    if (line.rfind("| ", 0) != 0 || line.rfind("| Category", 0) == 0) continue;
    std::vector<std::string> parts;
    std::stringstream ls(line.substr(1));
    std::string cell;
    while (std::getline(ls, cell, '|')) parts.push_back(cell.substr(1, cell.size() - 2));
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      ++cells;
      const double mean = agg.categories.at(row).metrics.at(metrics[m]).mean;
      mismatched += parts.at(m + 1) != format_3dp(mean) || std::fabs(std::stod(parts.at(m + 1)) - mean) > 0.0005 + 1e-12;
    }
    ++row;
  }

  ImageCache cache(scratch / "cache");
  ReportInputs inputs;
  inputs.title = "category sweep";
  inputs.observations = obs;
  inputs.metrics = metrics;
  inputs.cache = &cache;
  const auto a = summary_report(inputs, scratch / "report_a");
  const auto b = summary_report(inputs, scratch / "report_b");
  std::size_t files = 0, differing = 0;
  std::vector<fs::path> text_files = {a.summary};
  text_files.insert(text_files.end(), a.plots.begin(), a.plots.end());
  text_files.insert(text_files.end(), a.tables.begin(), a.tables.end());
  for (const auto& f : text_files) {
    ++files;
    differing += slurp(f) != slurp(b.output_dir / fs::relative(f, a.output_dir));
  }
  return check(cells > 0 && mismatched == 0 && differing == 0 && row == agg.categories.size(),
               std::to_string(cells) + " table cells, " + std::to_string(mismatched) + " off at 3 dp; " +
                   std::to_string(files) + " markdown/CSV/SVG files, " + std::to_string(differing) +
                   " differ on regeneration");
}

Outcome p10_real_backend(const Scratch& scratch) {
  const char* url = std::getenv("PROMPTLENS_BACKEND_URL");
  if (!url || !*url) return {Outcome::State::kSkip, "PROMPTLENS_BACKEND_URL not set"};
  ExperimentConfig cfg;
  cfg.name = "real_backend_smoke";
  cfg.base_prompts = {"A portrait of a woman"};
  cfg.seeds = {0};
  for (auto c : {ModifierCategory::kDescriptor, ModifierCategory::kNoun, ModifierCategory::kArtist})
    cfg.lexicons.push_back({c, "builtin:" + std::string(to_string(c)), 3});
  cfg.generation.backend_id = "http";
  cfg.generation.width = cfg.generation.height = 512;
  cfg.adapter_url = url;
  cfg.workers = 1;
  cfg.metrics = {MetricId::kLpips, MetricId::kVggPerceptual, MetricId::kClipFlatCosine};
  cfg.output_dir = scratch / "real";
  cfg.cache_dir = scratch / "real_cache";
  const auto summary = run_experiment(cfg);
  if (summary.failed > 0) return fail(std::to_string(summary.failed) + " runs failed");
  const auto agg = aggregate_by_category(ResultStore::read(RunPaths{cfg.output_dir}.store()), {MetricId::kLpips});
  std::map<ModifierCategory, double> mean;
  for (const auto& c : agg.categories) mean[c.category] = c.metrics.at(MetricId::kLpips).mean;
  return check(mean[ModifierCategory::kDescriptor] >= mean[ModifierCategory::kNoun],
               "descriptor " + fmt(mean[ModifierCategory::kDescriptor], 3) + " vs noun " +
                   fmt(mean[ModifierCategory::kNoun], 3) + " (stochastic across model versions)");
}

}  // namespace

int main() {
  Scratch scratch;
  struct Criterion {
    const char* id;
    const char* name;
    bool gating;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"P1", "determinism", true, p1_determinism},
      {"P2", "metric properties", true, p2_metric_properties},
      {"P3", "oracle equivalence", true, p3_oracles},
      {"P4", "category direction", true, [&] { return p4_category_direction(scratch); }},
      {"P5", "repetition monotonicity", true, [&] { return p5_repetition(scratch); }},
      {"P6", "bimodality", true, p6_bimodality},
      {"P7", "correlation recovery", true, p7_correlation},
      {"P8", "resume and cache", true, [&] { return p8_resume(scratch); }},
      {"P9", "report fidelity", true, [&] { return p9_report(scratch); }},
      {"P10", "real backend smoke", false, [&] { return p10_real_backend(scratch); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* state = o.state == Outcome::State::kPass ? "PASS" : o.state == Outcome::State::kSkip ? "SKIP" : "FAIL";
    std::cout << c.id << " " << state << "  " << c.name << (c.gating ? "" : " (non-gating)") << ": " << o.detail
              << " [" << fmt(secs, 1) << "s]" << std::endl;
    if (o.state == Outcome::State::kFail && c.gating) ++failed;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : "acceptance: all gating criteria passed")
            << std::endl;
  return failed ? 1 : 0;
}
