#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "promptlens/analysis.hpp"
#include "promptlens/experiment.hpp"
#include "promptlens/http_adapter.hpp"
#include "promptlens/hash.hpp"
#include "promptlens/metrics/perceptual.hpp"
#include "promptlens/report.hpp"
#include "promptlens/service.hpp"

namespace fs = std::filesystem;
using namespace promptlens;

namespace {

std::atomic<int> g_signal{0};

extern "C" void on_signal(int sig) { g_signal.store(sig); }

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

// Polls the signal flag and fires `action` once.
template <typename Action>
std::jthread signal_watcher(Action action) {
  return std::jthread([action](std::stop_token st) {
    while (!st.stop_requested()) {
      if (g_signal.load() != 0) {
        action();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
}

std::vector<MetricId> parse_metrics(const std::vector<std::string>& names) {
  std::vector<MetricId> out;
  for (const auto& n : names) out.push_back(metric_from_string(n));
  return out;
}

// Metrics present in the store, in canonical order.
std::vector<MetricId> metrics_in(const std::vector<PairObservation>& observations) {
  std::vector<MetricId> out;
  for (MetricId m : kAllMetrics) {
    for (const auto& o : observations) {
      if (o.has(m)) {
        out.push_back(m);
        break;
      }
    }
  }
  return out;
}

// A store path or a run directory holding observations.jsonl.
fs::path store_path(const fs::path& arg) {
  if (fs::is_directory(arg)) return RunPaths{arg}.store();
  return arg;
}

std::vector<PairObservation> load_store(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kNotFound, "no store at " + path.string());
  return ResultStore::read(path);
}

std::optional<RunManifest> sibling_manifest(const fs::path& store) {
  const fs::path m = store.parent_path() / "manifest.json";
  if (!fs::exists(m)) return std::nullopt;
  return RunManifest::load(m);
}

void print_table(const AnalysisBundle& bundle) {
  std::cout << category_table_markdown(bundle.aggregation, bundle.metrics);
  for (const auto& w : bundle.aggregation.warnings) std::cout << "warning: " << w << "\n";
  if (bundle.comparison) std::cout << "\n" << bundle.comparison->describe() << "\n";
  for (const auto& [m, modes] : bundle.lighting_modes) {
    std::cout << "lighting " << to_string(m) << ": " << modes.mode_count << " mode(s)\n";
  }
}

int cmd_run(const std::string& target, const std::string& out, const std::string& cache_dir, int workers,
            const std::string& backend, const std::string& backend_url, bool json, bool quiet) {
  ExperimentConfig config = fs::is_regular_file(target) ? ExperimentConfig::load(target) : preset(target);
  if (!out.empty()) config.output_dir = out;
  if (!cache_dir.empty()) config.cache_dir = fs::path(cache_dir);
  if (!backend.empty()) config.generation.backend_id = backend;
  if (!backend_url.empty()) config.adapter_url = backend_url;
  config.validate();

  std::stop_source stop;
  install_signal_handlers();
  auto watcher = signal_watcher([&stop] {
    std::cerr << "\ninterrupt: finishing in-flight runs, then stopping\n";
    stop.request_stop();
  });

  ExecuteOptions options;
  options.workers = workers;
  options.stop = stop.get_token();
  if (!quiet) {
    options.on_progress = [](const PlannedRun& run, std::size_t finished, std::size_t total) {
      std::cerr << "\r[" << finished << "/" << total << "] " << run.run_id << " " << to_string(run.status)
                << "      " << std::flush;
    };
  }
  const ExecuteSummary s = run_experiment(config, options);
  if (!quiet) std::cerr << "\n";
  watcher.request_stop();

  const nlohmann::json summary = {{"output_dir", config.resolved_output_dir().string()},
                                  {"executed", s.executed},
                                  {"skipped", s.skipped},
                                  {"failed", s.failed},
                                  {"stopped", s.stopped},
                                  {"backend_invocations", s.backend_invocations},
                                  {"cache_hits", s.cache_hits}};
  if (json) {
    std::cout << summary.dump() << "\n";
  } else {
    std::cout << "output:              " << config.resolved_output_dir().string() << "\n"
              << "executed:            " << s.executed << "\n"
              << "skipped:             " << s.skipped << "\n"
              << "failed:              " << s.failed << "\n"
              << "backend invocations: " << s.backend_invocations << "\n"
              << "cache hits:          " << s.cache_hits << "\n";
    if (s.stopped) std::cout << "stopped early; re-run the same command to resume\n";
  }
  if (s.stopped) return 130;
  return s.failed > 0 ? 3 : 0;
}

int cmd_analyze(const std::string& arg, const std::vector<std::string>& metric_names, const std::string& json_out) {
  const fs::path path = store_path(arg);
  const auto observations = load_store(path);
  const auto metrics = metric_names.empty() ? metrics_in(observations) : parse_metrics(metric_names);
  const AnalysisBundle bundle = analyze_observations(observations, metrics);
  if (json_out == "-") {
    std::cout << to_json(bundle).dump(2) << "\n";
    return 0;
  }
  print_table(bundle);
  if (!json_out.empty()) {
    write_file_atomic(json_out, to_json(bundle).dump(2) + "\n");
    std::cout << "analysis written to " << json_out << "\n";
  }
  return 0;
}

int cmd_report(const std::string& arg, const std::string& out, const std::string& title, const std::string& cache_dir,
               const std::vector<std::string>& metric_names) {
  const fs::path path = store_path(arg);
  ReportInputs inputs;
  inputs.observations = load_store(path);
  inputs.metrics = metric_names.empty() ? metrics_in(inputs.observations) : parse_metrics(metric_names);

  const auto manifest = sibling_manifest(path);
  inputs.title = !title.empty() ? title : manifest ? manifest->name : std::string("promptlens report");

  fs::path cache_path = cache_dir;
  if (cache_path.empty() && manifest) cache_path = ExperimentConfig::from_json(manifest->config).resolved_cache_dir();
  std::unique_ptr<ImageCache> cache;
  if (!cache_path.empty() && fs::is_directory(cache_path)) {
    cache = std::make_unique<ImageCache>(cache_path);
    inputs.cache = cache.get();
  }

  const fs::path out_dir = out.empty() ? path.parent_path() / "report" : fs::path(out);
  const ReportBundle bundle = summary_report(inputs, out_dir);
  std::cout << bundle.summary.string() << "\n";
  std::cout << bundle.tables.size() << " tables, " << bundle.plots.size() << " plots, " << bundle.sheets.size()
            << " contact sheets\n";
  return 0;
}

int cmd_probe(const std::string& base, const std::string& modifier, const std::string& category, std::uint64_t seed,
              int repetitions, int size, const std::string& root) {
  ServiceConfig cfg;
  cfg.root = root;
  cfg.defaults.width = size;
  cfg.defaults.height = size;
  Service service(cfg);
  SessionManager& sessions = service.sessions();
  const Session s = sessions.create(base, seed);
  const ProbeRecord p = sessions.probe(s.session_id, modifier, category_from_string(category), repetitions);
  nlohmann::json out = to_json(p);
  out["session_id"] = s.session_id;
  out["base_prompt"] = s.base_prompt;
  out["base_image_hash"] = s.base_image_hash;
  std::cout << out.dump(2) << "\n";
  return p.metric_errors.empty() ? 0 : 3;
}

int cmd_serve(const std::string& host, int port, const std::string& root, const std::string& runs_dir,
              const std::string& static_dir) {
  ServiceConfig cfg;
  cfg.root = root;
  cfg.runs_dir = runs_dir.empty() ? fs::path(root) / "runs" : fs::path(runs_dir);
  if (!static_dir.empty()) cfg.static_dir = fs::path(static_dir);
  Service service(cfg);
  const int bound = service.bind(host, port);
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  install_signal_handlers();
  auto watcher = signal_watcher([&service] { service.stop(); });
  service.serve();
  return 0;
}

int cmd_export_weights(const std::string& which, const std::string& out) {
  const auto bytes = reference_weights(which + "-ref-v1").serialize();
  write_file_atomic(out, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  std::cout << out << " sha256=" << sha256_hex(bytes) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure how prompt modifiers change text-to-image output."};
  app.set_version_flag("--version", std::string(toolkit_version()));
  app.require_subcommand(1);

  std::string target, out, cache_dir, backend, backend_url;
  int workers = 0;
  bool json = false, quiet = false;
  auto* run = app.add_subcommand("run", "Plan and execute an experiment (resumable)");
  run->add_option("config", target, "TOML config file or preset name")->required();
  run->add_option("-o,--out", out, "Output directory (default runs/<name>)");
  run->add_option("--cache-dir", cache_dir, "Image cache directory");
  run->add_option("-j,--workers", workers, "Worker threads (0: auto)")->check(CLI::NonNegativeNumber);
  run->add_option("--backend", backend, "Backend id (synthetic, http)");
  run->add_option("--backend-url", backend_url, "Diffusion adapter URL");
  run->add_flag("--json", json, "Print the summary as JSON");
  run->add_flag("-q,--quiet", quiet, "No progress output");

  auto* presets = app.add_subcommand("presets", "List preset names");

  std::string store;
  std::vector<std::string> metric_names;
  std::string json_out;
  auto* analyze = app.add_subcommand("analyze", "Aggregate a result store");
  analyze->add_option("store", store, "observations.jsonl or its run directory")->required();
  analyze->add_option("-m,--metric", metric_names, "Metrics to include (default: all in the store)");
  analyze->add_option("--json", json_out, "Write the analysis as JSON ('-' for stdout)");

  std::string title, report_out, report_cache;
  auto* report = app.add_subcommand("report", "Write a markdown/CSV/SVG report bundle");
  report->add_option("store", store, "observations.jsonl or its run directory")->required();
  report->add_option("-o,--out", report_out, "Output directory (default <run>/report)");
  report->add_option("--title", title, "Report title");
  report->add_option("--cache-dir", report_cache, "Image cache for contact sheets");
  report->add_option("-m,--metric", metric_names, "Metrics to include");

  std::string base, modifier, category = "descriptor", root = ".";
  std::uint64_t seed = 0;
  int repetitions = 1, size = 128;
  auto* probe = app.add_subcommand("probe", "Score one modifier against a base prompt");
  probe->add_option("--base", base, "Base prompt")->required();
  probe->add_option("--modifier", modifier, "Modifier text")->required();
  probe->add_option("--category", category, "descriptor, noun, artist or lighting");
  probe->add_option("--seed", seed, "Seed");
  probe->add_option("--repeat", repetitions, "Repetition count")->check(CLI::PositiveNumber);
  probe->add_option("--size", size, "Image width and height")->check(CLI::Range(8, 2048));
  probe->add_option("--root", root, "Session and cache root");

  std::string host = "127.0.0.1", runs_dir, static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--port", port, "Port (0: any free port)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--root", root, "Session and cache root");
  serve->add_option("--runs-dir", runs_dir, "Directory of experiment runs (default <root>/runs)");
  serve->add_option("--static", static_dir, "Serve static UI assets from this directory");

  std::string which, weights_out;
  auto* weights = app.add_subcommand("export-weights", "Write the built-in reference network weights");
  weights->add_option("network", which, "lpips or vgg")->required()->check(CLI::IsMember({"lpips", "vgg"}));
  weights->add_option("output", weights_out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(target, out, cache_dir, workers, backend, backend_url, json, quiet);
    if (*presets) {
      for (const auto& n : preset_names()) std::cout << n << "\n";
      return 0;
    }
    if (*analyze) return cmd_analyze(store, metric_names, json_out);
    if (*report) return cmd_report(store, report_out, title, report_cache, metric_names);
    if (*probe) return cmd_probe(base, modifier, category, seed, repetitions, size, root);
    if (*serve) return cmd_serve(host, port, root, runs_dir, static_dir);
    if (*weights) return cmd_export_weights(which, weights_out);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what();
    if (!e.detail().empty()) std::cerr << " (" << e.detail() << ")";
    std::cerr << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
