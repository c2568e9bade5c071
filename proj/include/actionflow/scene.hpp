#pragma once

#include "actionflow/math.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace actionflow {

//! Pinhole camera. rotation/translation map world points into the camera frame.
struct Camera {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 416.0;
  double cy = 240.0;
  int width = 832;
  int height = 480;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  /// Throws InvalidArgument when intrinsics or rotation are out of range.
  void validate() const;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }

  bool operator==(const Camera&) const = default;
};

enum class MaterialClass : std::uint8_t { Rigid, Elastic, Cloth, Smoke, Liquid, Granular };

std::string_view to_string(MaterialClass c);
MaterialClass material_class_from_string(std::string_view s);

inline bool is_pbd(MaterialClass c) {
  return c == MaterialClass::Elastic || c == MaterialClass::Cloth || c == MaterialClass::Smoke;
}
inline bool is_mpm(MaterialClass c) { return c == MaterialClass::Liquid || c == MaterialClass::Granular; }

//! Homogeneous material description. Only the fields relevant to `cls` are read
//! by the solvers; the rest keep their defaults.
struct MaterialParams {
  MaterialClass cls = MaterialClass::Rigid;

  double mass = 0.0;  // rigid total mass in kg; 0 derives it from density
  double density = 1000.0;
  double friction_coefficient = 0.1;

  double youngs_modulus = 1e7;
  double poissons_ratio = 0.2;
  double friction_angle = 45.0;  // degrees

  double stretch_compliance = 0.0;
  double bending_compliance = 0.0;
  double volume_compliance = 0.0;
  double stretch_relaxation = 0.3;
  double bending_relaxation = 0.3;
  double volume_relaxation = 0.1;

  double viscosity = 0.1;

  static MaterialParams defaults(MaterialClass cls);
  void validate() const;

  bool operator==(const MaterialParams&) const = default;
};

struct PointForce {
  Vec3 position = Vec3::Zero();
  Vec3 force = Vec3::Zero();
  double radius = 0.05;
  double duration = 0.0;  // <= 0 means "one frame interval"
};

struct ForceField {
  Vec3 acceleration = Vec3::Zero();
  std::optional<Aabb> region;
};

struct GripperCommand {
  Vec3 ee_position = Vec3::Zero();
  Quat ee_orientation = Quat::Identity();
  double gripper_opening = 1.0;
};

//! Extrinsics only; intrinsics stay those of the scene camera.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

using Action = std::variant<PointForce, ForceField, GripperCommand, CameraPose>;

/// Throws InvalidArgument for actions violating their field ranges.
void validate(const Action& action);

struct RigidState {
  std::vector<Vec3> rest_positions;
  Vec3 rest_center = Vec3::Zero();   // mass-weighted
  Quat orientation = Quat::Identity();  // last fitted rotation, warm start for the next fit
};

struct Edge {
  std::uint32_t a, b;
  double rest;
};
struct Bend {
  std::uint32_t a, mid, b;  // angle at `mid`
  std::uint32_t reserved = 0;  // keeps the record free of padding bytes
  double rest_angle;
};
struct Tet {
  std::uint32_t v[4];
  double rest_volume;
};

//! Constraint topology for elastic, cloth and smoke objects.
struct PbdState {
  std::vector<Edge> edges;
  std::vector<Bend> bends;
  std::vector<Tet> tets;
  std::vector<std::uint8_t> pinned;  // empty or one flag per particle
  double rest_density = 0.0;          // smoke only (kernel-sum units)
  double kernel_radius = 0.0;         // smoke only
  bool built = false;
  // Colour batches: constraints [c[k], c[k+1]) of each list touch disjoint
  // particles and may be projected concurrently. Empty = one sequential batch.
  std::vector<std::uint32_t> edge_colors, bend_colors, tet_colors;
};

struct MpmState {
  std::vector<Mat3> deformation;  // F
  std::vector<Mat3> affine;       // APIC C
  std::vector<double> volume;
  std::vector<Mat3> stress;  // Kirchhoff stress of `deformation`; empty = recompute
};

using SolverState = std::variant<std::monostate, RigidState, PbdState, MpmState>;

struct DynamicObject {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::vector<Vec3f> colors;
  std::vector<double> masses;
  MaterialParams material;
  SolverState solver;

  std::size_t size() const { return positions.size(); }
  /// Checks array lengths, finiteness and per-class solver invariants.
  void validate() const;
};

struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3f> colors;

  std::size_t size() const { return positions.size(); }
};

struct SceneState {
  PointCloud background;
  std::vector<DynamicObject> objects;
  Camera camera;
  double sim_time = 0.0;
  Vec3 gravity{0.0, 0.0, -9.8};

  std::size_t dynamic_count() const;
};

//! h x w x c latent tensor, channel-fastest layout.
struct Latent {
  int h = 0, w = 0, c = 0;
  std::vector<float> data;

  Latent() = default;
  Latent(int h_, int w_, int c_) : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, 0.0f) {}
  float& at(int y, int x, int k) { return data[(static_cast<std::size_t>(y) * w + x) * c + k]; }
  float at(int y, int x, int k) const { return data[(static_cast<std::size_t>(y) * w + x) * c + k]; }
  bool same_shape(const Latent& o) const { return h == o.h && w == o.w && c == o.c; }
};

struct ConditioningFrame {
  int width = 0, height = 0;
  std::vector<float> flow;             // H*W*2, pixels/frame
  std::vector<std::uint8_t> preview;   // H*W*3 RGB8
  std::vector<float> depth;            // H*W, +inf where empty
  std::vector<std::uint8_t> coverage;  // H*W, 0/1
  std::optional<Latent> warped_noise;
  std::uint32_t frame_index = 0;
  double sim_time = 0.0;
};

}  // namespace actionflow
