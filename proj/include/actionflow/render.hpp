#pragma once

#include "actionflow/exec.hpp"
#include "actionflow/scene.hpp"

#include <cstdint>
#include <vector>

namespace actionflow {

struct SplatConfig {
  double splat_radius = 1.5;  // pixels
  void validate() const;
};

struct Projection {
  double u = 0.0, v = 0.0, depth = 0.0;
  bool visible = false;  // false when the point is at or behind the camera plane
};

Projection project(const Vec3& point, const Camera& camera);

//! Output of one splat pass. Pixels not hit by any splat have zero flow,
//! black colour, infinite depth and coverage 0.
struct RenderBuffers {
  int width = 0, height = 0;
  std::vector<float> flow;             // H*W*2
  std::vector<std::uint8_t> preview;   // H*W*3
  std::vector<float> depth;            // H*W
  std::vector<std::uint8_t> coverage;  // H*W
  std::vector<std::uint32_t> winner;   // H*W, point index (background first), UINT32_MAX if empty
};

/// Splats every point of the scene once under `now`: nearest depth wins per
/// pixel (ties to the lower point index). The winner supplies colour, depth
/// and the flow Π_next(p + dt·v) − Π_now(p).
RenderBuffers render_frame(const SceneState& state, const Camera& now, const Camera& next, double dt,
                           const SplatConfig& config = {}, Exec exec = Exec::Serial);

RenderBuffers render_flow(const SceneState& state, const Camera& now, const Camera& next, double dt,
                          const SplatConfig& config = {}, Exec exec = Exec::Serial);
RenderBuffers render_preview(const SceneState& state, const Camera& camera, const SplatConfig& config = {},
                             Exec exec = Exec::Serial);

/// Copies the buffers into a conditioning frame (noise left empty).
ConditioningFrame to_conditioning_frame(RenderBuffers&& buffers, std::uint32_t frame_index, double sim_time);

}  // namespace actionflow
