#pragma once

// Procedural scenes for benchmarks, examples and tests that need a realistic
// point budget without an image bundle.

#include "actionflow/scene.hpp"

#include <array>
#include <vector>

namespace actionflow {

struct SyntheticObject {
  MaterialClass cls = MaterialClass::Rigid;
  Vec3 min_corner = Vec3::Zero();     // world, z up
  std::array<int, 3> dims{5, 5, 5};  // lattice points per axis; cloth is a dims[0] x dims[1] curtain in x-z
  Vec3f color{0.8f, 0.3f, 0.2f};
  bool pin_top_corners = false;       // cloth only
};

struct SyntheticSpec {
  int width = 832, height = 480;
  std::size_t background_points = 150000;
  std::vector<SyntheticObject> objects;
  double particle_size = 1e-2;
  std::uint64_t seed = 0;
  Vec3 gravity{0.0, 0.0, -9.8};
};

/// Ground plane (z = 0) plus a back wall, seen by a camera at (0, -1.2, 0.5)
/// looking along +y and slightly down. Objects are lattices at the particle
/// spacing with solver state initialised for their material.
SceneState synthetic_scene(const SyntheticSpec& spec);

/// Camera used by synthetic scenes.
Camera synthetic_camera(int width, int height);

}  // namespace actionflow
