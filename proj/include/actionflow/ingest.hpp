#pragma once

#include "actionflow/image_io.hpp"
#include "actionflow/scene.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace actionflow {

struct BundleObject {
  std::vector<std::uint8_t> mask;  // H*W, nonzero = inside
  MaterialParams material;
  PointCloud occluded;  // world frame, may be empty
};

//! File-based scene description: one RGB-D view, an inpainted background
//! view, and per-object masks with materials.
struct SceneBundle {
  Camera camera;  // intrinsics, image size and (optional) world->camera pose
  Image8 image;
  std::vector<float> depth;
  Image8 background_image;
  std::vector<float> background_depth;
  std::optional<Vec3> gravity;  // world frame; defaults to image-down at 9.8 m/s^2
  std::vector<BundleObject> objects;

  int width() const { return camera.width; }
  int height() const { return camera.height; }
  /// Checks sizes, mask disjointness and depth under masks.
  void validate() const;
};

/// Reads meta.json, image.png, depth.f32, background.png,
/// background_depth.f32, mask_<i>.png and occluded_<i>.f32 from `dir`.
SceneBundle load_scene_bundle(const std::filesystem::path& dir);
void write_scene_bundle(const std::filesystem::path& dir, const SceneBundle& bundle);

/// One point per set mask pixel in the camera frame: ((u-cx)d/fx, (v-cy)d/fy, d),
/// colour from `colors` (RGB8) scaled to [0,1]. An empty mask selects every
/// pixel; with `skip_invalid`, pixels with non-positive or non-finite depth are
/// dropped instead of raising InvalidDepth.
PointCloud unproject(std::span<const float> depth, const Camera& intrinsics, std::span<const std::uint8_t> mask,
                     const Image8& colors, bool skip_invalid = false);

struct BuildOptions {
  double particle_size = 1e-2;
};

SceneState build_scene(const SceneBundle& bundle, const BuildOptions& options = {});

// Solver-state construction for one object whose positions, masses and
// material are already set. `pixel_grid` (optional) gives the image
// coordinates of the first particles, used for cloth sheets.
struct PixelCoord {
  int u, v;
};
void init_rigid(DynamicObject& obj);
void init_elastic(DynamicObject& obj);
void init_cloth(DynamicObject& obj, std::span<const PixelCoord> pixel_grid);
void init_smoke(DynamicObject& obj, double particle_size);
void init_mpm(DynamicObject& obj, double particle_size);
/// Reorders the PBD constraint lists into colour batches (greedy, stable).
void color_constraints(PbdState& pbd, std::size_t particles);

/// Per-particle masses: rigid mass / N when a total is given, else density * h^3.
std::vector<double> particle_masses(const MaterialParams& material, std::size_t n, double particle_size);

}  // namespace actionflow
