#pragma once

// Headless, scripted runs of the streaming loop.

#include "actionflow/session.hpp"
#include "actionflow/synthetic.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace actionflow {

struct ScriptedAction {
  std::uint32_t tick = 0;  // arrives during this tick, applies from the next frame
  Action action;
};

struct ScenarioOutputs {
  bool preview = true;
  bool flow = true;
  bool noise = false;
  bool depth = false;
  bool state = false;
};

//! Scene source (bundle directory or synthetic spec), session configuration
//! and a tick-stamped action script.
struct Scenario {
  std::filesystem::path bundle;
  std::optional<SyntheticSpec> synthetic;
  SessionConfig config;
  std::vector<ScriptedAction> actions;
  std::uint32_t duration = 30;
  ScenarioOutputs outputs;

  /// Ticks sorted, duration covering the last action, exactly one scene source.
  void validate() const;
  SceneState build_scene() const;
};

/// Parses a scenario; relative bundle paths resolve against `base_dir`.
Scenario parse_scenario(const std::string& json_text, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);

/// Applies the keys of a JSON object onto a session config (unknown keys throw).
void apply_config_json(SessionConfig& config, const std::string& json_text);

struct FrameRecord {
  std::uint32_t frame_index = 0;
  double sim_time = 0.0;
  std::uint64_t hash = 0;  // FNV-1a over preview, flow, depth and noise
  double kinetic_energy = 0.0;
  std::size_t nonfinite = 0;
  TickTimings timings;
};

struct RunResult {
  std::vector<FrameRecord> frames;
  double momentum_drift = 0.0;  // |P_end - P_start|, kg m/s
  std::size_t nan_count = 0;
  bool halted = false;
  std::string halt_reason;
  double wall_seconds = 0.0;
};

using FrameCallback = std::function<void(const FrameOutput&, const Session&)>;

/// Runs the scenario in memory. `on_frame` sees every emitted frame.
RunResult run_scenario(const Scenario& scenario, const FrameCallback& on_frame = {});

/// Runs and writes frames, summary.json (deterministic) and timings.json.
RunResult run_scenario_to_dir(const Scenario& scenario, const std::filesystem::path& out_dir);

/// Hash of a frame's conditioning payloads.
std::uint64_t frame_hash(const FrameOutput& frame);

struct StageStats {
  double p50 = 0, p95 = 0, mean = 0, max = 0;
};
struct BenchReport {
  std::size_t frames = 0;
  StageStats physics, render, noise, generate, total;
  double fps = 0.0;
  std::size_t dynamic_particles = 0, background_points = 0;
};

/// Runs the scenario `repetitions` times and aggregates per-tick timings.
BenchReport bench_scenario(const Scenario& scenario, int repetitions);
std::string to_json(const BenchReport& report);

StageStats stage_stats(std::vector<double> samples);

}  // namespace actionflow
