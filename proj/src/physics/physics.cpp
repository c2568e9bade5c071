#include "actionflow/error.hpp"
#include "actionflow/physics.hpp"

#include <cmath>
#include <string>

namespace actionflow {

void SimConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
  };
  require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
  require(substeps >= 1 && substeps <= 20, "substeps must lie in [1, 20]");
  require(particle_size > 0.0, "particle size must be positive");
  require(mpm_grid_density >= 8.0, "MPM grid density must be at least 8");
  require(pbd_iterations >= 1, "PBD iterations must be positive");
  require(mpm_cfl > 0.0 && mpm_cfl <= 1.0, "MPM CFL number must lie in (0, 1]");
  require(mpm_max_cells >= 1000, "MPM cell cap too small");
  require(gripper_friction >= 0.0 && smoke_buoyancy >= 0.0, "negative gripper friction or buoyancy");
}

std::vector<Vec3> total_acceleration(const DynamicObject& obj, const SceneState& state,
                                     std::span<const Vec3> external, const SimConfig& config) {
  Vec3 base = state.gravity;
  if (obj.material.cls == MaterialClass::Smoke && config.smoke_buoyancy > 0.0) {
    const double g = state.gravity.norm();
    base += (g > 0.0 ? Vec3(-state.gravity / g) : Vec3::UnitZ()) * config.smoke_buoyancy;
  }
  std::vector<Vec3> accel(obj.size(), base);
  if (!external.empty()) {
    if (external.size() != obj.size()) throw Error(ErrorCode::ShapeError, "acceleration array size mismatch");
    for (std::size_t i = 0; i < accel.size(); ++i) accel[i] += external[i];
  }
  return accel;
}

PhysicsEngine::PhysicsEngine(const SceneState& initial, const SimConfig& config) : config_(config) {
  config_.validate();
  background_.build(initial.background.positions, config_.particle_size);
  background_.build_proximity();
  for (const auto& obj : initial.objects) has_mpm_ = has_mpm_ || is_mpm(obj.material.cls);
  if (has_mpm_) grid_ = MpmGrid::for_scene(initial, config_);
}

SceneState PhysicsEngine::step(const SceneState& state, const ResolvedActions& actions) {
  SceneState next = state;
  step_in_place(next, actions);
  return next;
}

void PhysicsEngine::step_in_place(SceneState& state, const ResolvedActions& actions) {
  if (!actions.accelerations.empty() && actions.accelerations.size() != state.objects.size())
    throw Error(ErrorCode::ShapeError, "one acceleration array per object expected");
  if (state.background.positions.size() != background_.size())
    throw Error(ErrorCode::InvalidArgument, "scene background differs from the one the engine was built for");

  report_ = {};
  const double dt_sub = config_.substep_dt();
  std::vector<std::vector<Vec3>> accel(state.objects.size());
  for (std::size_t o = 0; o < state.objects.size(); ++o) {
    std::span<const Vec3> external;
    if (!actions.accelerations.empty()) external = actions.accelerations[o];
    accel[o] = total_acceleration(state.objects[o], state, external, config_);
  }

  CollisionContext ctx;
  ctx.background = &background_;
  ctx.background_points = state.background.positions;
  ctx.gripper = actions.gripper;
  ctx.dt_sub = dt_sub;

  for (int s = 0; s < config_.substeps; ++s) {
    for (std::size_t o = 0; o < state.objects.size(); ++o) {
      auto& obj = state.objects[o];
      try {
        switch (obj.material.cls) {
          case MaterialClass::Rigid:
            rigid_substep(obj, dt_sub, accel[o]);
            break;
          case MaterialClass::Elastic:
          case MaterialClass::Cloth:
          case MaterialClass::Smoke:
            pbd_substep(obj, dt_sub, accel[o], config_.pbd_iterations, config_.exec);
            break;
          case MaterialClass::Liquid:
          case MaterialClass::Granular:
            if (!has_mpm_) throw Error(ErrorCode::InvalidArgument, "MPM object added after engine construction");
            mpm_substep(obj, grid_, dt_sub, accel[o], config_, &report_);
            break;
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NumericalBlowup || dynamic_cast<const NumericalBlowup*>(&e)) throw;
        throw NumericalBlowup(o, "object " + std::to_string(o) + ": " + e.what());
      }
    }
    ctx.gripper_fraction = static_cast<double>(s + 1) / config_.substeps;
    resolve_collisions(state, config_, ctx, &report_);
  }
  state.sim_time += config_.dt;
  check_finite(state);
}

SceneState physics_step(const SceneState& state, std::span<const Action> actions, const SimConfig& config) {
  PhysicsEngine engine(state, config);
  const auto resolved = resolve_actions(actions, state, state.sim_time, config.dt);
  return engine.step(state, resolved);
}

void check_finite(const SceneState& state) {
  constexpr double kLimit = 1e6;
  for (std::size_t o = 0; o < state.objects.size(); ++o) {
    const auto& obj = state.objects[o];
    for (std::size_t i = 0; i < obj.size(); ++i) {
      const auto& p = obj.positions[i];
      const auto& v = obj.velocities[i];
      if (!all_finite(p) || !all_finite(v) || p.cwiseAbs().maxCoeff() > kLimit)
        throw NumericalBlowup(o, "object " + std::to_string(o) + " particle " + std::to_string(i) +
                                     " left the finite range");
    }
  }
}

Vec3 total_momentum(const SceneState& state) {
  Vec3 p = Vec3::Zero();
  for (const auto& obj : state.objects)
    for (std::size_t i = 0; i < obj.size(); ++i) p += obj.masses[i] * obj.velocities[i];
  return p;
}

double kinetic_energy(const SceneState& state) {
  double e = 0.0;
  for (const auto& obj : state.objects)
    for (std::size_t i = 0; i < obj.size(); ++i) e += 0.5 * obj.masses[i] * obj.velocities[i].squaredNorm();
  return e;
}

}  // namespace actionflow
