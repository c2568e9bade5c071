#pragma once

#include "actionflow/actions.hpp"
#include "actionflow/exec.hpp"
#include "actionflow/scene.hpp"
#include "actionflow/spatial_hash.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace actionflow {

struct SimConfig {
  double dt = 1e-2;
  int substeps = 10;
  double particle_size = 1e-2;
  double mpm_grid_density = 64.0;  // cells per metre
  int pbd_iterations = 10;
  std::uint64_t seed = 0;
  Exec exec = Exec::Serial;

  /// Explicit MPM sub-cycles are added until dt_mpm <= mpm_cfl * dx / wave speed.
  double mpm_cfl = 0.6;
  std::size_t mpm_max_cells = std::size_t{1} << 21;
  /// Disables grid-border and background collider conditions in MPM.
  bool mpm_open_boundary = false;
  double gripper_friction = 1.0;
  /// Upward acceleration applied to smoke (opposes gravity); 0 disables it.
  double smoke_buoyancy = 0.0;

  void validate() const;
  double substep_dt() const { return dt / substeps; }
  bool operator==(const SimConfig&) const = default;
};

//! Dense background grid for the MPM solver. Storage covers the whole domain;
//! only the cells touched by particles in the current substep are visited.
struct MpmGrid {
  std::array<int, 3> dims{0, 0, 0};
  double cell_size = 0.0;
  Vec3 origin = Vec3::Zero();
  std::vector<Vec3> momentum;  // becomes velocity after the grid update
  std::vector<double> mass;
  std::vector<std::uint8_t> solid;       // cells occupied by background colliders
  std::vector<Vec3f> solid_normal;       // outward normal at solid cells (zero = interior)
  std::vector<std::uint32_t> active;     // cells touched this substep
  std::vector<std::uint32_t> stamp;
  std::uint32_t epoch = 0;

  /// Grid over the dilated scene bounds, with background points rasterised as solid cells.
  static MpmGrid for_scene(const SceneState& scene, const SimConfig& config);

  std::size_t cell_count() const { return mass.size(); }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims[1] + y) * dims[2] + z;
  }
  Vec3 upper() const { return origin + cell_size * Vec3(dims[0], dims[1], dims[2]); }
};

struct StepReport {
  std::size_t clamped_particles = 0;  // MPM particles pushed back inside the grid
  int mpm_subcycles = 0;
  std::size_t background_contacts = 0;
  std::size_t object_contacts = 0;
};

//! Static collision data and MPM grid shared by successive steps of one scene.
//! The background never moves, so these are built once.
class PhysicsEngine {
 public:
  PhysicsEngine(const SceneState& initial, const SimConfig& config);

  /// Advances by config.dt. `actions.accelerations` may be empty (no external
  /// forces) or sized per object. Gravity is added here.
  SceneState step(const SceneState& state, const ResolvedActions& actions);
  /// In-place variant of step().
  void step_in_place(SceneState& state, const ResolvedActions& actions);

  const SimConfig& config() const { return config_; }
  const StepReport& last_report() const { return report_; }
  const SpatialHash& background_index() const { return background_; }

 private:
  SimConfig config_;
  SpatialHash background_;
  MpmGrid grid_;
  bool has_mpm_ = false;
  StepReport report_;
};

/// One step from scratch (rebuilds static structures). Convenience for tests and tools.
SceneState physics_step(const SceneState& state, std::span<const Action> actions, const SimConfig& config);

/// Per-particle total acceleration = gravity (+ smoke buoyancy) + external.
std::vector<Vec3> total_acceleration(const DynamicObject& obj, const SceneState& state,
                                     std::span<const Vec3> external, const SimConfig& config);

// Per-family solvers. `accel` holds one entry per particle.

/// Integrates then projects onto the best-fit rigid transform of the rest shape.
void rigid_substep(DynamicObject& obj, double dt_sub, std::span<const Vec3> accel);
/// Re-imposes rigidity after contacts: positions onto the best-fit transform,
/// velocities onto the momentum-preserving rigid velocity field.
void rigidify(DynamicObject& obj);

//! Contact of one rigid-body particle with a kinematic or static collider.
struct RigidContact {
  std::size_t particle = 0;
  Vec3 normal = Vec3::UnitZ();      // out of the collider
  Vec3 collider_velocity = Vec3::Zero();
  double friction = 0.0;
};

/// Sequential impulses on the body's rigid velocity field so that no contact
/// point approaches its collider; inelastic, with Coulomb friction. Call after
/// rigidify.
void rigid_contact_impulses(DynamicObject& obj, std::span<const RigidContact> contacts, int iterations = 8);
/// Rotation of the best-fit rigid transform mapping rest offsets onto `positions`.
Mat3 best_fit_rotation(const DynamicObject& obj, std::span<const Vec3> positions, Vec3* center = nullptr);

/// SPH number density (poly6 kernel, unit particle mass) of every particle;
/// the smoke density constraint is expressed in these units.
std::vector<double> kernel_densities(std::span<const Vec3> positions, double kernel_radius);

void pbd_substep(DynamicObject& obj, double dt_sub, std::span<const Vec3> accel, int iterations,
                 Exec exec = Exec::Serial);

void mpm_substep(DynamicObject& obj, MpmGrid& grid, double dt_sub, std::span<const Vec3> accel,
                 const SimConfig& config, StepReport* report = nullptr);

/// Stable explicit MPM time step for a material at the given cell size.
double mpm_stable_dt(const MaterialParams& material, double cell_size, double cfl, double max_speed);

//! Static colliders consulted by resolve_collisions.
struct CollisionContext {
  const SpatialHash* background = nullptr;
  std::span<const Vec3> background_points;
  std::optional<GripperMotion> gripper;
  double gripper_fraction = 1.0;  // interpolation point of the gripper within the step
  double dt_sub = 1e-3;
};

/// Contact projection to separation `particle_size` between dynamic
/// particles of different objects and against background points and the
/// gripper, with Coulomb friction. Returns the number of contacts handled.
std::size_t resolve_collisions(SceneState& state, const SimConfig& config, const CollisionContext& ctx,
                               StepReport* report = nullptr);
/// Convenience overload that indexes the background on the fly.
std::size_t resolve_collisions(SceneState& state, const SimConfig& config, double dt_sub = 1e-3);

/// Throws NumericalBlowup if any object holds a non-finite value or a
/// coordinate beyond 1e6 m.
void check_finite(const SceneState& state);

/// Total linear momentum and kinetic energy of all dynamic particles.
Vec3 total_momentum(const SceneState& state);
double kinetic_energy(const SceneState& state);

}  // namespace actionflow
