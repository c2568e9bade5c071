// Serial vs OpenMP timings of the per-frame kernels. Arg 0 = Exec::Serial,
// 1 = Exec::Parallel; compare the pairs.

#include "actionflow/noise.hpp"
#include "actionflow/physics.hpp"
#include "actionflow/render.hpp"
#include "actionflow/session.hpp"
#include "actionflow/synthetic.hpp"

#include <benchmark/benchmark.h>

#include <cmath>

using namespace actionflow;

namespace {

Exec exec_of(const benchmark::State& st) { return st.range(0) ? Exec::Parallel : Exec::Serial; }

// 150k background points and 20k dynamic ones at 832x480.
SceneState full_scene() {
  SyntheticSpec spec;
  spec.objects.push_back({MaterialClass::Rigid, Vec3(-0.25, 0.3, 0.0), {20, 20, 20}});
  spec.objects.push_back({MaterialClass::Granular, Vec3(0.05, 0.3, 0.0), {20, 20, 30}});
  return synthetic_scene(spec);
}

SceneState physics_scene(MaterialClass a, std::array<int, 3> da, std::optional<MaterialClass> b = {},
                         std::array<int, 3> db = {}) {
  SyntheticSpec spec;
  spec.width = 208;
  spec.height = 120;
  spec.objects.push_back({a, Vec3(-0.2, 0.3, 0.0), da});
  if (b) spec.objects.push_back({*b, Vec3(0.1, 0.3, 0.0), db});
  return synthetic_scene(spec);
}

void BM_RenderFrame(benchmark::State& st) {
  const auto scene = full_scene();
  SplatConfig cfg;
  for (auto _ : st) {
    auto out = render_frame(scene, scene.camera, scene.camera, 1e-2, cfg, exec_of(st));
    benchmark::DoNotOptimize(out.flow.data());
  }
}
BENCHMARK(BM_RenderFrame)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void step_bench(benchmark::State& st, SceneState scene) {
  SimConfig cfg;
  cfg.exec = exec_of(st);
  PhysicsEngine engine(scene, cfg);
  const auto initial = scene;
  int steps = 0;
  for (auto _ : st) {
    engine.step_in_place(scene, {});
    // Restart before the objects come to rest so every step does contact work.
    if (++steps % 50 == 0) {
      st.PauseTiming();
      scene = initial;
      st.ResumeTiming();
    }
  }
}

// 2548 rigid + 2448 elastic particles.
void BM_StepRigidPbd(benchmark::State& st) {
  step_bench(st, physics_scene(MaterialClass::Rigid, {14, 14, 13}, MaterialClass::Elastic, {12, 12, 17}));
}
BENCHMARK(BM_StepRigidPbd)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_StepMpm(benchmark::State& st) {
  step_bench(st, physics_scene(MaterialClass::Granular, {20, 20, 25}));
}
BENCHMARK(BM_StepMpm)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_NoiseWarp(benchmark::State& st) {
  const int w = 832, h = 480;
  std::vector<float> flow(static_cast<std::size_t>(w) * h * 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto i = (static_cast<std::size_t>(y) * w + x) * 2;
      flow[i] = static_cast<float>(6.0 * std::sin(y * 0.02));
      flow[i + 1] = static_cast<float>(4.0 * std::cos(x * 0.015));
    }
  NoiseConfig cfg;
  auto noise = NoiseState::create(w, h, 1, cfg);
  for (auto _ : st) benchmark::DoNotOptimize(warp_noise(noise, flow, w, h).data.data());
}
BENCHMARK(BM_NoiseWarp)->Unit(benchmark::kMillisecond);

void BM_SessionTick(benchmark::State& st) {
  SessionConfig cfg;
  cfg.sim.exec = exec_of(st);
  Session session(full_scene(), cfg);
  for (auto _ : st) benchmark::DoNotOptimize(session.tick().has_value());
}
BENCHMARK(BM_SessionTick)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
