// Command-line front end: scripted runs, benchmarks, the stream server and
// bundle checks.

#include "actionflow/error.hpp"
#include "actionflow/ingest.hpp"
#include "actionflow/scenario.hpp"
#include "actionflow/server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace actionflow;
namespace fs = std::filesystem;

namespace {

StreamServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::NotFound, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void override_seed(Scenario& s, std::optional<std::uint64_t> seed) {
  if (seed) s.config.seed = s.config.sim.seed = *seed;
}

int cmd_run(const fs::path& scenario_path, const fs::path& out, std::optional<std::uint64_t> seed, bool parallel) {
  auto s = load_scenario(scenario_path);
  override_seed(s, seed);
  if (parallel) s.config.sim.exec = Exec::Parallel;
  const auto r = run_scenario_to_dir(s, out);
  std::cout << "frames " << r.frames.size() << "  momentum drift " << r.momentum_drift << "  nan " << r.nan_count
            << "  wall " << r.wall_seconds << " s\n";
  if (r.halted) {
    std::cerr << "halted: " << r.halt_reason << "\n";
    return 2;
  }
  return 0;
}

int cmd_bench(const fs::path& scenario_path, int reps, std::optional<std::uint32_t> frames, bool parallel,
              const fs::path& json_out) {
  auto s = load_scenario(scenario_path);
  if (frames) s.duration = *frames;
  s.config.sim.exec = parallel ? Exec::Parallel : Exec::Serial;
  const auto report = bench_scenario(s, reps);
  const auto text = to_json(report);
  if (!json_out.empty()) std::ofstream(json_out) << text << "\n";
  std::cout << text << "\n";
  return 0;
}

int cmd_validate(const fs::path& dir, double particle_size) {
  const auto bundle = load_scene_bundle(dir);
  const auto scene = build_scene(bundle, {.particle_size = particle_size});
  std::cout << "bundle " << dir.string() << ": " << bundle.width() << "x" << bundle.height() << ", "
            << scene.background.size() << " background points\n";
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    double mass = 0.0;
    for (double m : scene.objects[i].masses) mass += m;
    std::cout << "  object " << i << ": " << to_string(scene.objects[i].material.cls) << ", "
              << scene.objects[i].size() << " particles, " << mass << " kg\n";
  }
  return 0;
}

struct ServeArgs {
  fs::path bundle, scenario, config, static_dir;
  std::string address = "127.0.0.1";
  unsigned short port = 8765;
  double fps = 30.0;
  std::optional<std::uint64_t> seed;
  bool async = false;
  bool parallel = false;
};

int cmd_serve(const ServeArgs& a) {
  SessionConfig cfg;
  SceneState scene;
  if (!a.scenario.empty()) {
    const auto s = load_scenario(a.scenario);
    cfg = s.config;
    scene = s.build_scene();
  } else {
    scene = build_scene(load_scene_bundle(a.bundle), {.particle_size = cfg.sim.particle_size});
  }
  if (!a.config.empty()) apply_config_json(cfg, read_text(a.config));
  if (a.seed) cfg.seed = cfg.sim.seed = *a.seed;
  cfg.target_fps = a.fps;
  cfg.deterministic = !a.async;
  if (a.parallel) cfg.sim.exec = Exec::Parallel;

  ServerOptions opt;
  opt.address = a.address;
  opt.port = a.port;
  opt.static_dir = a.static_dir;
  opt.config_path = a.config;
  StreamServer server(std::make_unique<Session>(std::move(scene), cfg), opt);
  const auto port = server.listen();
  std::cout << "serving on http://" << a.address << ":" << port << " (websocket on the same port)" << std::endl;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"actionflow: interactive physics conditioning engine"};
  app.require_subcommand(1);

  fs::path run_scenario_path, run_out = "out";
  std::optional<std::uint64_t> run_seed;
  bool run_parallel = false;
  auto* run = app.add_subcommand("run", "Run a scenario headlessly and write frames and a summary");
  run->add_option("scenario", run_scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", run_out, "Output directory");
  run->add_option("--seed", run_seed, "Override the scenario seed");
  run->add_flag("--parallel", run_parallel, "Use the OpenMP kernels");

  fs::path bench_path, bench_json;
  int bench_reps = 3;
  std::optional<std::uint32_t> bench_frames;
  bool bench_parallel = false;
  auto* bench = app.add_subcommand("bench", "Time a scenario and report per-stage latencies");
  bench->add_option("scenario", bench_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  bench->add_option("-r,--reps", bench_reps, "Repetitions")->check(CLI::PositiveNumber);
  bench->add_option("-n,--frames", bench_frames, "Override the scenario duration");
  bench->add_flag("--parallel", bench_parallel, "Use the OpenMP kernels");
  bench->add_option("--json", bench_json, "Also write the report to this file");

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Run the live stream server");
  auto* src_bundle = serve->add_option("--bundle", serve_args.bundle, "Scene bundle directory")->check(CLI::ExistingDirectory);
  auto* src_scenario =
      serve->add_option("--scenario", serve_args.scenario, "Scenario file providing scene and config")->check(CLI::ExistingFile);
  src_bundle->excludes(src_scenario);
  serve->add_option("--address", serve_args.address, "Listen address");
  serve->add_option("-p,--port", serve_args.port, "Listen port");
  serve->add_option("--fps", serve_args.fps, "Target tick rate")->check(CLI::PositiveNumber);
  serve->add_option("--seed", serve_args.seed, "Noise and simulation seed");
  serve->add_flag("--async", serve_args.async, "Run generation on a worker thread (not bit-deterministic)");
  serve->add_flag("--parallel", serve_args.parallel, "Use the OpenMP kernels");
  serve->add_option("--config", serve_args.config, "JSON config overrides, re-read on SetConfig");
  serve->add_option("--static", serve_args.static_dir, "Directory of static assets (the cockpit build)");

  fs::path validate_dir;
  double validate_h = 1e-2;
  auto* validate = app.add_subcommand("validate-bundle", "Load a bundle, build its scene and print a summary");
  validate->add_option("bundle", validate_dir, "Bundle directory")->required();
  validate->add_option("--particle-size", validate_h, "Particle spacing in metres");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_scenario_path, run_out, run_seed, run_parallel);
    if (*bench) return cmd_bench(bench_path, bench_reps, bench_frames, bench_parallel, bench_json);
    if (*serve) {
      if (serve_args.bundle.empty() && serve_args.scenario.empty()) {
        std::cerr << "serve needs --bundle or --scenario\n";
        return 1;
      }
      return cmd_serve(serve_args);
    }
    if (*validate) return cmd_validate(validate_dir, validate_h);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
