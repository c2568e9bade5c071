#include "actionflow/error.hpp"
#include "actionflow/protocol.hpp"

#include "bundles.hpp"
#include "sessions.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace testing_support;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

//! Relative path -> content hash for every file under `root`.
std::map<std::string, std::uint64_t> tree_hashes(const fs::path& root, const std::string& skip) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == skip) continue;
    const auto text = slurp(e.path());
    out[fs::relative(e.path(), root).string()] =
        fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
  return out;
}

Scenario small_scenario(std::uint32_t duration, MaterialClass cls = MaterialClass::Rigid) {
  Scenario s;
  s.synthetic = small_spec(cls);
  s.duration = duration;
  return s;
}

}  // namespace

TEST_CASE("scenario parsing") {
  const auto s = parse_scenario(R"({
    "synthetic": {"width": 64, "height": 48, "background_points": 100,
                  "objects": [{"class": "granular", "min_corner": [0, 0.3, 0.02], "dims": [3, 3, 3]}]},
    "config": {"substeps": 5, "alpha": 0.25, "noise_mode": "bilinear", "seed": 9},
    "duration": 12,
    "actions": [
      {"tick": 0, "type": "point_force", "position": [0, 0.3, 0.05], "force": [1, 0, 0], "radius": 0.1},
      {"tick": 2, "type": "force_field", "acceleration": [2, 0, 0], "region": {"lo": [-1, -1, -1], "hi": [1, 1, 1]}},
      {"tick": 3, "type": "gripper", "position": [0, 0.3, 0.2], "orientation": [1, 0, 0, 0], "opening": 0.5},
      {"tick": 4, "type": "camera", "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1], "translation": [0, 0, 1]}
    ],
    "outputs": {"noise": true, "state": true}
  })");
  CHECK(s.config.sim.substeps == 5);
  CHECK(s.config.alpha == 0.25);
  CHECK(s.config.noise.mode == WarpMode::Bilinear);
  CHECK(s.config.seed == 9);
  CHECK(s.config.sim.seed == 9);
  CHECK(s.duration == 12);
  REQUIRE(s.actions.size() == 4);
  CHECK(std::get<PointForce>(s.actions[0].action).radius == 0.1);
  CHECK(std::get<ForceField>(s.actions[1].action).region.has_value());
  CHECK(std::get<GripperCommand>(s.actions[2].action).gripper_opening == 0.5);
  CHECK(std::get<CameraPose>(s.actions[3].action).translation == Vec3(0, 0, 1));
  CHECK(s.outputs.noise);
  CHECK(s.outputs.state);
  REQUIRE(s.synthetic);
  CHECK(s.synthetic->objects[0].cls == MaterialClass::Granular);
}

TEST_CASE("invalid scenarios") {
  const std::string scene = R"("synthetic": {"width": 32, "height": 32, "background_points": 10})";
  auto rejects = [](const std::string& text) {
    CHECK_THROWS_AS(parse_scenario(text), Error);
  };
  rejects("{" + scene + R"(, "duration": 3, "actions": [{"tick": 5, "type": "force_field", "acceleration": [1,0,0]}]})");
  rejects("{" + scene + R"(, "actions": [{"tick": 2, "type": "force_field", "acceleration": [1,0,0]},
                                        {"tick": 1, "type": "force_field", "acceleration": [1,0,0]}]})");
  rejects("{" + scene + R"(, "actions": [{"tick": -1, "type": "force_field", "acceleration": [1,0,0]}]})");
  rejects("{" + scene + R"(, "actions": [{"tick": 0, "type": "teleport"}]})");
  rejects("{" + scene + R"(, "config": {"gravity_scale": 2}})");
  rejects("{" + scene + R"(, "extra": 1})");
  rejects(R"({"duration": 3})");
  rejects("{" + scene + R"(, "bundle": "somewhere"})");
  rejects("not json");
  rejects("{" + scene + R"(, "config": {"alpha": 3}})");
  CHECK_THROWS_AS(load_scenario("/nonexistent/scenario.json"), Error);
}

TEST_CASE("config overrides from JSON") {
  SessionConfig c;
  apply_config_json(c, R"({"dt": 0.02, "parallel": true, "splat_radius": 2.0, "prompt": "a cat"})");
  CHECK(c.sim.dt == 0.02);
  CHECK(c.sim.exec == Exec::Parallel);
  CHECK(c.splat.splat_radius == 2.0);
  CHECK(c.prompt == "a cat");
  CHECK_THROWS_AS(apply_config_json(c, R"({"nope": 1})"), Error);
  CHECK_THROWS_AS(apply_config_json(c, R"({"dt": "fast"})"), Error);
}

TEST_CASE("idle scenario writes zero-flow frames and a clean summary") {
  TempDir dir("idle");
  auto s = parse_scenario(R"({
    "synthetic": {"width": 96, "height": 64, "background_points": 4000, "gravity": [0, 0, 0],
                  "objects": [{"class": "rigid", "min_corner": [-0.03, 0.3, 0.02], "dims": [6, 6, 6]}]},
    "duration": 30,
    "outputs": {"noise": true, "depth": true}
  })");
  const auto result = run_scenario_to_dir(s, dir.path);
  CHECK(result.frames.size() == 30);
  CHECK_FALSE(result.halted);
  CHECK(result.nan_count == 0);
  CHECK(result.momentum_drift == 0.0);
  for (std::uint32_t k = 1; k <= 30; ++k) {
    char stem[16];
    std::snprintf(stem, sizeof stem, "%06u", k);
    const auto frames = dir.path / "frames";
    CHECK(fs::exists(frames / (std::string(stem) + "_preview.png")));
    CHECK(fs::exists(frames / (std::string(stem) + "_depth.f16")));
    CHECK(fs::exists(frames / (std::string(stem) + "_noise.f16")));
    const auto flow = slurp(frames / (std::string(stem) + "_flow.f16"));
    CHECK(flow.size() == 96u * 64u * 2u * 2u);
    CHECK(std::all_of(flow.begin(), flow.end(), [](char c) { return c == 0; }));
  }
  const auto meta = json::parse(slurp(dir.path / "frames" / "000003_noise.json"));
  CHECK(meta["h"] == 8);
  CHECK(meta["w"] == 12);
  CHECK(meta["c"] == 16);
  CHECK(meta["frame_index"] == 3);
  CHECK(meta["dtype"] == "float16");
  const auto flow_meta = json::parse(slurp(dir.path / "frames" / "000030_flow.json"));
  CHECK(flow_meta["sim_time"].get<double>() == doctest::Approx(0.30));
  CHECK(flow_meta["channels"] == 2);

  const auto summary = json::parse(slurp(dir.path / "summary.json"));
  CHECK(summary["frames"] == 30);
  CHECK(summary["nan_count"] == 0);
  CHECK(summary["momentum_drift"] == 0.0);
  CHECK(summary["halted"] == false);
  CHECK(summary["frame_hashes"].size() == 30);
  CHECK(summary["kinetic_energy"].size() == 30);
  const auto timings = json::parse(slurp(dir.path / "timings.json"));
  CHECK(timings["per_frame"].size() == 30);
  CHECK(timings["physics_ms"]["p95"].get<double>() >= timings["physics_ms"]["p50"].get<double>());
}

TEST_CASE("scenario runs are pure functions of the scenario") {
  auto s = small_scenario(15, MaterialClass::Elastic);
  s.outputs.noise = s.outputs.depth = s.outputs.state = true;
  s.actions.push_back({2, PointForce{Vec3(0.0, 0.33, 0.05), Vec3(0.5, 0.0, 1.0), 0.1, 0.05}});
  s.actions.push_back({6, ForceField{Vec3(0.0, 2.0, 0.0), std::nullopt}});
  TempDir a("det_a"), b("det_b");
  const auto ra = run_scenario_to_dir(s, a.path);
  const auto rb = run_scenario_to_dir(s, b.path);
  REQUIRE(ra.frames.size() == rb.frames.size());
  for (std::size_t i = 0; i < ra.frames.size(); ++i) CHECK(ra.frames[i].hash == rb.frames[i].hash);
  const auto ta = tree_hashes(a.path, "timings.json"), tb = tree_hashes(b.path, "timings.json");
  CHECK(ta.size() == 15u * 8u + 1u);  // 7 frame files and a state dump per frame, plus the summary
  CHECK(ta == tb);

  auto other = s;
  other.config.seed = other.config.sim.seed = 1;
  const auto rc = run_scenario(other);
  CHECK(rc.frames[0].hash != ra.frames[0].hash);
}

TEST_CASE("scripted actions apply from the following frame") {
  auto s = small_scenario(8);
  s.synthetic->objects[0].min_corner.z() = 0.3;
  s.actions.push_back({4, PointForce{Vec3(0.0, 0.33, 0.33), Vec3(0.0, 0.0, 5.0), 0.2, 0.0}});
  std::vector<double> ke;
  const auto probe_scene = synthetic_scene(*s.synthetic);
  run_scenario(s, [&](const FrameOutput&, const Session& session) {
    ke.push_back(kinetic_energy(session.scene()));
  });
  REQUIRE(ke.size() == 8);
  // Free fall until frame 5, then an upward push; energy under pure gravity grows as t^2.
  const double g = 9.8;
  double mass = 0.0;
  for (double m : probe_scene.objects[0].masses) mass += m;
  for (int k = 1; k <= 4; ++k) {
    const double v = g * 0.01 * k;
    CHECK(ke[k - 1] == doctest::Approx(0.5 * mass * v * v).epsilon(1e-9));
  }
  const double v5 = g * 0.05;
  CHECK(ke[4] != doctest::Approx(0.5 * mass * v5 * v5).epsilon(1e-6));
}

TEST_CASE("wind on a granular pile settles") {
  Scenario s;
  SyntheticSpec spec;
  spec.width = 64;
  spec.height = 48;
  spec.background_points = 2000;
  SyntheticObject sand;
  sand.cls = MaterialClass::Granular;
  sand.dims = {8, 8, 6};
  sand.min_corner = Vec3(-0.04, 0.3, 0.0);
  spec.objects.push_back(sand);
  s.synthetic = spec;
  s.duration = 150;
  s.actions.push_back({10, ForceField{Vec3(6.0, 0.0, 0.0), std::nullopt}});
  s.actions.push_back({25, ForceField{Vec3::Zero(), std::nullopt}});
  const auto r = run_scenario(s);
  REQUIRE_FALSE(r.halted);
  double peak = 0.0;
  std::size_t peak_at = 0;
  for (std::size_t i = 0; i < r.frames.size(); ++i)
    if (r.frames[i].kinetic_energy > peak) peak = r.frames[i].kinetic_energy, peak_at = i;
  CHECK(peak > 0.0);
  CHECK(peak_at < r.frames.size() - 1);
  CHECK(r.frames.back().kinetic_energy < 0.05 * peak);
  CHECK(r.nan_count == 0);
}

TEST_CASE("blowup halts the run and is reported") {
  TempDir dir("blowup");
  auto s = small_scenario(10);
  s.actions.push_back({3, PointForce{Vec3(0.0, 0.33, 0.05), Vec3(0.0, 0.0, 1e306), 0.2, 0.0}});
  const auto r = run_scenario_to_dir(s, dir.path);
  CHECK(r.halted);
  CHECK(r.frames.size() == 3);
  CHECK_FALSE(r.halt_reason.empty());
  const auto summary = json::parse(slurp(dir.path / "summary.json"));
  CHECK(summary["halted"] == true);
  CHECK(summary.contains("halt_reason"));
}

TEST_CASE("scenarios load bundles relative to their file") {
  TempDir dir("bundle");
  auto bundle = flat_bundle(24, 16);
  bundle.objects.push_back({rect_mask(24, 16, 8, 4, 16, 12), MaterialParams::defaults(MaterialClass::Rigid), {}});
  write_scene_bundle(dir.path / "scene", bundle);
  {
    std::ofstream(dir.path / "run.json") << R"({"bundle": "scene", "duration": 3})";
  }
  const auto s = load_scenario(dir.path / "run.json");
  CHECK(s.bundle == dir.path / "scene");
  const auto r = run_scenario(s);
  CHECK(r.frames.size() == 3);
}

TEST_CASE("stage statistics") {
  const auto st = stage_stats({5, 1, 4, 2, 3});
  CHECK(st.p50 == 3);
  CHECK(st.max == 5);
  CHECK(st.mean == 3);
  std::vector<double> hundred;
  for (int i = 1; i <= 100; ++i) hundred.push_back(i);
  CHECK(stage_stats(hundred).p95 == 95);
  CHECK(stage_stats({}).p50 == 0);
}

TEST_CASE("bench of an empty scene is bounded by loop overhead") {
  Scenario s;
  SyntheticSpec spec;
  spec.width = 64;
  spec.height = 48;
  spec.background_points = 0;
  s.synthetic = spec;
  s.duration = 100;
  const auto report = bench_scenario(s, 2);
  CHECK(report.frames == 200);
  CHECK(report.fps > 1000.0);
  const auto j = json::parse(to_json(report));
  CHECK(j.contains("physics_ms"));
  CHECK(j["total_ms"].contains("p95"));
}
