#include "actionflow/scenario.hpp"

#include "actionflow/error.hpp"
#include "actionflow/image_io.hpp"
#include "actionflow/ingest.hpp"
#include "actionflow/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace actionflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); }

Vec3 vec3_of(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) bad(std::string(what) + " must be an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) bad(std::string(what) + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
      bad(std::string("unknown key \"") + key + "\" in " + what);
}

void apply_config(SessionConfig& c, const json& j) {
  if (!j.is_object()) bad("config must be an object");
  for (const auto& [key, v] : j.items()) {
    auto& s = c.sim;
    if (key == "dt") s.dt = v.get<double>();
    else if (key == "substeps") s.substeps = v.get<int>();
    else if (key == "particle_size") s.particle_size = v.get<double>();
    else if (key == "mpm_grid_density") s.mpm_grid_density = v.get<double>();
    else if (key == "pbd_iterations") s.pbd_iterations = v.get<int>();
    else if (key == "mpm_cfl") s.mpm_cfl = v.get<double>();
    else if (key == "mpm_max_cells") s.mpm_max_cells = v.get<std::size_t>();
    else if (key == "mpm_open_boundary") s.mpm_open_boundary = v.get<bool>();
    else if (key == "gripper_friction") s.gripper_friction = v.get<double>();
    else if (key == "smoke_buoyancy") s.smoke_buoyancy = v.get<double>();
    else if (key == "parallel") s.exec = v.get<bool>() ? Exec::Parallel : Exec::Serial;
    else if (key == "splat_radius") c.splat.splat_radius = v.get<double>();
    else if (key == "noise_downsample") c.noise.downsample = v.get<int>();
    else if (key == "noise_channels") c.noise.channels = v.get<int>();
    else if (key == "refill_threshold") c.noise.refill_threshold = v.get<double>();
    else if (key == "noise_mode") {
      const auto m = v.get<std::string>();
      if (m == "stochastic") c.noise.mode = WarpMode::Stochastic;
      else if (m == "bilinear") c.noise.mode = WarpMode::Bilinear;
      else bad("noise_mode must be \"stochastic\" or \"bilinear\"");
    } else if (key == "alpha") c.alpha = v.get<double>();
    else if (key == "target_fps") c.target_fps = v.get<double>();
    else if (key == "seed") c.seed = s.seed = v.get<std::uint64_t>();
    else if (key == "deterministic") c.deterministic = v.get<bool>();
    else if (key == "prompt") c.prompt = v.get<std::string>();
    else if (key == "history_length") c.history_length = v.get<std::size_t>();
    else bad("unknown config key \"" + key + "\"");
  }
}

Action parse_action(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "point_force") {
    check_keys(j, {"tick", "type", "position", "force", "radius", "duration"}, "point_force");
    PointForce f;
    f.position = vec3_of(j.at("position"), "position");
    f.force = vec3_of(j.at("force"), "force");
    f.radius = j.value("radius", f.radius);
    f.duration = j.value("duration", f.duration);
    return f;
  }
  if (type == "force_field") {
    check_keys(j, {"tick", "type", "acceleration", "region"}, "force_field");
    ForceField f;
    f.acceleration = vec3_of(j.at("acceleration"), "acceleration");
    if (j.contains("region")) {
      const auto& r = j["region"];
      f.region = Aabb{vec3_of(r.at("lo"), "region.lo"), vec3_of(r.at("hi"), "region.hi")};
    }
    return f;
  }
  if (type == "gripper") {
    check_keys(j, {"tick", "type", "position", "orientation", "opening"}, "gripper");
    GripperCommand g;
    g.ee_position = vec3_of(j.at("position"), "position");
    if (j.contains("orientation")) {
      const auto q = j["orientation"].get<std::vector<double>>();
      if (q.size() != 4) bad("orientation must be [w, x, y, z]");
      g.ee_orientation = Quat(q[0], q[1], q[2], q[3]);
    }
    g.gripper_opening = j.value("opening", g.gripper_opening);
    return g;
  }
  if (type == "camera") {
    check_keys(j, {"tick", "type", "rotation", "translation"}, "camera");
    CameraPose c;
    const auto r = j.at("rotation").get<std::vector<double>>();
    if (r.size() != 9) bad("camera rotation must have 9 entries (row-major)");
    for (int i = 0; i < 9; ++i) c.rotation(i / 3, i % 3) = r[i];
    c.translation = vec3_of(j.at("translation"), "translation");
    return c;
  }
  bad("unknown action type \"" + type + "\"");
}

SyntheticSpec parse_synthetic(const json& j) {
  check_keys(j, {"width", "height", "background_points", "particle_size", "seed", "gravity", "objects"}, "synthetic");
  SyntheticSpec s;
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.background_points = j.value("background_points", s.background_points);
  s.particle_size = j.value("particle_size", s.particle_size);
  s.seed = j.value("seed", s.seed);
  if (j.contains("gravity")) s.gravity = vec3_of(j["gravity"], "gravity");
  for (const auto& o : j.value("objects", json::array())) {
    check_keys(o, {"class", "min_corner", "dims", "color", "pin_top_corners"}, "synthetic object");
    SyntheticObject so;
    so.cls = material_class_from_string(o.at("class").get<std::string>());
    so.min_corner = vec3_of(o.at("min_corner"), "min_corner");
    so.dims = o.at("dims").get<std::array<int, 3>>();
    if (o.contains("color")) {
      const auto c = vec3_of(o["color"], "color");
      so.color = c.cast<float>();
    }
    so.pin_top_corners = o.value("pin_top_corners", false);
    s.objects.push_back(so);
  }
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string frame_stem(std::uint32_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06u", index);
  return buf;
}

void write_f16(const fs::path& path, std::span<const float> values) {
  std::vector<std::uint16_t> half(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) half[i] = to_f16(values[i]);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(half.data()), static_cast<std::streamsize>(half.size() * 2));
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
}

void write_sidecar(const fs::path& path, const json& meta) { write_text(path, meta.dump(2) + "\n"); }

std::size_t count_nonfinite(std::span<const float> v) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](float x) { return !std::isfinite(x); }));
}

json timings_json(const TickTimings& t) {
  return {{"physics_ms", t.physics_ms}, {"render_ms", t.render_ms}, {"noise_ms", t.noise_ms},
          {"generate_ms", t.generate_ms}, {"total_ms", t.total_ms}};
}

json stats_json(const StageStats& s) { return {{"p50", s.p50}, {"p95", s.p95}, {"mean", s.mean}, {"max", s.max}}; }

}  // namespace

void Scenario::validate() const {
  if (bundle.empty() == !synthetic.has_value()) bad("scenario needs exactly one of \"bundle\" or \"synthetic\"");
  for (std::size_t i = 1; i < actions.size(); ++i)
    if (actions[i].tick < actions[i - 1].tick) bad("scenario actions must be sorted by tick");
  if (!actions.empty() && duration < actions.back().tick) bad("scenario duration ends before its last action");
  config.validate();
  for (const auto& a : actions) actionflow::validate(a.action);
}

SceneState Scenario::build_scene() const {
  if (synthetic) return synthetic_scene(*synthetic);
  return actionflow::build_scene(load_scene_bundle(bundle), {.particle_size = config.sim.particle_size});
}

void apply_config_json(SessionConfig& config, const std::string& json_text) {
  try {
    apply_config(config, json::parse(json_text));
  } catch (const json::exception& e) {
    bad(std::string("config: ") + e.what());
  }
}

Scenario parse_scenario(const std::string& text, const fs::path& base_dir) {
  Scenario s;
  try {
    const json j = json::parse(text);
    check_keys(j, {"bundle", "synthetic", "config", "actions", "duration", "outputs", "seed"}, "scenario");
    if (j.contains("bundle")) {
      s.bundle = j["bundle"].get<std::string>();
      if (s.bundle.is_relative()) s.bundle = base_dir / s.bundle;
    }
    if (j.contains("synthetic")) s.synthetic = parse_synthetic(j["synthetic"]);
    if (j.contains("config")) apply_config(s.config, j["config"]);
    if (j.contains("seed")) s.config.seed = s.config.sim.seed = j["seed"].get<std::uint64_t>();
    s.duration = j.value("duration", s.duration);
    for (const auto& a : j.value("actions", json::array())) {
      const auto& tick = a.at("tick");
      if (!tick.is_number_integer() || tick.get<std::int64_t>() < 0 || tick.get<std::int64_t>() > 0xFFFFFFFFll)
        bad("action tick must be a non-negative integer");
      s.actions.push_back({tick.get<std::uint32_t>(), parse_action(a)});
    }
    if (j.contains("outputs")) {
      const auto& o = j["outputs"];
      check_keys(o, {"preview", "flow", "noise", "depth", "state"}, "outputs");
      s.outputs.preview = o.value("preview", s.outputs.preview);
      s.outputs.flow = o.value("flow", s.outputs.flow);
      s.outputs.noise = o.value("noise", s.outputs.noise);
      s.outputs.depth = o.value("depth", s.outputs.depth);
      s.outputs.state = o.value("state", s.outputs.state);
    }
  } catch (const json::exception& e) {
    bad(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "missing scenario " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path.parent_path());
}

std::uint64_t frame_hash(const FrameOutput& f) {
  const auto& c = f.conditioning;
  std::uint64_t h = fnv1a64({reinterpret_cast<const std::uint8_t*>(&c.frame_index), sizeof c.frame_index});
  h = fnv1a64({reinterpret_cast<const std::uint8_t*>(&c.sim_time), sizeof c.sim_time}, h);
  h = hash_values(c.preview, h);
  h = hash_values(c.flow, h);
  h = hash_values(c.depth, h);
  if (c.warped_noise) h = hash_values(c.warped_noise->data, h);
  h = hash_values(f.mixed.data, h);
  return hash_values(f.generated, h);
}

RunResult run_scenario(const Scenario& scenario, const FrameCallback& on_frame) {
  scenario.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Session session(scenario.build_scene(), scenario.config);
  RunResult result;
  const Vec3 p0 = total_momentum(session.scene());
  std::size_t next_action = 0;
  for (std::uint32_t t = 0; t < scenario.duration; ++t) {
    while (next_action < scenario.actions.size() && scenario.actions[next_action].tick == t)
      session.submit(scenario.actions[next_action++].action);
    auto frame = session.tick();
    if (!frame) {
      result.halted = true;
      for (const auto& e : session.drain_events())
        if (e.code == EventCode::Frozen) result.halt_reason = e.detail;
      if (result.halt_reason.empty()) result.halt_reason = "session stopped";
      break;
    }
    FrameRecord rec;
    rec.frame_index = frame->conditioning.frame_index;
    rec.sim_time = frame->conditioning.sim_time;
    rec.hash = frame_hash(*frame);
    rec.kinetic_energy = kinetic_energy(session.scene());
    rec.nonfinite = count_nonfinite(frame->conditioning.flow) + count_nonfinite(frame->mixed.data);
    rec.timings = frame->timings;
    result.nan_count += rec.nonfinite;
    result.frames.push_back(rec);
    if (on_frame) on_frame(*frame, session);
  }
  result.momentum_drift = (total_momentum(session.scene()) - p0).norm();
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

RunResult run_scenario_to_dir(const Scenario& scenario, const fs::path& out_dir) {
  const auto frames_dir = out_dir / "frames";
  fs::create_directories(frames_dir);
  if (scenario.outputs.state) fs::create_directories(out_dir / "state");
  const auto& outputs = scenario.outputs;

  auto write_frame = [&](const FrameOutput& f, const Session& session) {
    const auto& c = f.conditioning;
    const auto stem = frame_stem(c.frame_index);
    const json header = {{"frame_index", c.frame_index}, {"sim_time", c.sim_time}, {"dtype", "float16"}};
    if (outputs.preview) write_png(frames_dir / (stem + "_preview.png"), Image8{c.width, c.height, 3, c.preview});
    if (outputs.flow) {
      write_f16(frames_dir / (stem + "_flow.f16"), c.flow);
      auto meta = header;
      meta["width"] = c.width, meta["height"] = c.height, meta["channels"] = 2;
      write_sidecar(frames_dir / (stem + "_flow.json"), meta);
    }
    if (outputs.depth) {
      write_f16(frames_dir / (stem + "_depth.f16"), c.depth);
      auto meta = header;
      meta["width"] = c.width, meta["height"] = c.height, meta["channels"] = 1;
      write_sidecar(frames_dir / (stem + "_depth.json"), meta);
    }
    if (outputs.noise && c.warped_noise) {
      write_f16(frames_dir / (stem + "_noise.f16"), c.warped_noise->data);
      auto meta = header;
      meta["h"] = c.warped_noise->h, meta["w"] = c.warped_noise->w, meta["c"] = c.warped_noise->c;
      write_sidecar(frames_dir / (stem + "_noise.json"), meta);
    }
    if (outputs.state) {
      const auto bytes = serialize_scene(session.scene());
      std::ofstream out(out_dir / "state" / (stem + ".bin"), std::ios::binary);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
  };
  const auto result = run_scenario(scenario, write_frame);

  json summary;
  summary["frames"] = result.frames.size();
  summary["sim_time"] = result.frames.empty() ? 0.0 : result.frames.back().sim_time;
  summary["seed"] = scenario.config.seed;
  summary["momentum_drift"] = result.momentum_drift;
  summary["nan_count"] = result.nan_count;
  summary["halted"] = result.halted;
  if (result.halted) summary["halt_reason"] = result.halt_reason;
  json hashes = json::array(), energy = json::array();
  for (const auto& f : result.frames) {
    hashes.push_back(hex64(f.hash));
    energy.push_back(f.kinetic_energy);
  }
  summary["frame_hashes"] = hashes;
  summary["kinetic_energy"] = energy;
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");

  // Wall-clock data lives apart from the summary so that reruns stay byte-identical.
  json timings;
  json per_frame = json::array();
  std::vector<double> phys, render, noise, gen, total;
  for (const auto& f : result.frames) {
    per_frame.push_back(timings_json(f.timings));
    phys.push_back(f.timings.physics_ms);
    render.push_back(f.timings.render_ms);
    noise.push_back(f.timings.noise_ms);
    gen.push_back(f.timings.generate_ms);
    total.push_back(f.timings.total_ms);
  }
  timings["per_frame"] = per_frame;
  timings["physics_ms"] = stats_json(stage_stats(phys));
  timings["render_ms"] = stats_json(stage_stats(render));
  timings["noise_ms"] = stats_json(stage_stats(noise));
  timings["generate_ms"] = stats_json(stage_stats(gen));
  timings["total_ms"] = stats_json(stage_stats(total));
  timings["wall_seconds"] = result.wall_seconds;
  write_text(out_dir / "timings.json", timings.dump(2) + "\n");
  return result;
}

StageStats stage_stats(std::vector<double> v) {
  StageStats s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  auto pct = [&](double q) {
    // Nearest-rank percentile.
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
  };
  s.p50 = pct(0.5);
  s.p95 = pct(0.95);
  s.max = v.back();
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  return s;
}

BenchReport bench_scenario(const Scenario& scenario, int repetitions) {
  if (repetitions < 1) bad("repetitions must be at least 1");
  BenchReport report;
  std::vector<double> phys, render, noise, gen, total;
  double wall = 0.0;
  for (int r = 0; r < repetitions; ++r) {
    const auto result = run_scenario(scenario, [&](const FrameOutput&, const Session& s) {
      if (report.background_points == 0) {
        report.background_points = s.scene().background.size();
        report.dynamic_particles = s.scene().dynamic_count();
      }
    });
    for (const auto& f : result.frames) {
      phys.push_back(f.timings.physics_ms);
      render.push_back(f.timings.render_ms);
      noise.push_back(f.timings.noise_ms);
      gen.push_back(f.timings.generate_ms);
      total.push_back(f.timings.total_ms);
      wall += f.timings.total_ms / 1000.0;
    }
    report.frames += result.frames.size();
  }
  report.physics = stage_stats(phys);
  report.render = stage_stats(render);
  report.noise = stage_stats(noise);
  report.generate = stage_stats(gen);
  report.total = stage_stats(total);
  report.fps = wall > 0.0 ? static_cast<double>(report.frames) / wall : 0.0;
  return report;
}

std::string to_json(const BenchReport& r) {
  json j;
  j["frames"] = r.frames;
  j["fps"] = r.fps;
  j["background_points"] = r.background_points;
  j["dynamic_particles"] = r.dynamic_particles;
  j["physics_ms"] = stats_json(r.physics);
  j["render_ms"] = stats_json(r.render);
  j["noise_ms"] = stats_json(r.noise);
  j["generate_ms"] = stats_json(r.generate);
  j["total_ms"] = stats_json(r.total);
  return j.dump(2);
}

}  // namespace actionflow
