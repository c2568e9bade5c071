#pragma once

#include "actionflow/exec.hpp"
#include "actionflow/scene.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace actionflow {

//! How carrier cells are transported along the pooled flow.
enum class WarpMode : std::uint8_t {
  /// Each cell is split onto its four bilinear neighbours and every target is
  /// normalised by the root of its accumulated squared weights.
  Bilinear,
  /// Each cell moves whole to one of its four bilinear neighbours, drawn with
  /// the bilinear weights as probabilities. Targets stay sums of disjoint,
  /// independent cells, so the carrier remains i.i.d. standard normal.
  Stochastic,
};

struct NoiseConfig {
  int downsample = 8;  // s
  int channels = 16;   // c
  double refill_threshold = 0.05;
  WarpMode mode = WarpMode::Stochastic;
};

//! Persistent latent-resolution Gaussian carrier advected frame to frame.
struct NoiseState {
  NoiseConfig config;
  Latent carrier;
  std::mt19937_64 rng;
  std::normal_distribution<float> normal{0.0f, 1.0f};
  std::uniform_real_distribution<double> uniform{0.0, 1.0};
  std::uint64_t seed = 0;
  std::uint32_t frame_index = 0;

  /// Fresh N(0,1) carrier of size (height/s, width/s, c).
  static NoiseState create(int width, int height, std::uint64_t seed, const NoiseConfig& config = {});

  /// Textual RNG state, for snapshots.
  std::string rng_state() const;
  void restore_rng(const std::string& text);
};

/// Average-pools an H×W×2 pixel flow to the latent grid, in latent cells.
std::vector<float> pool_flow(std::span<const float> flow, int width, int height, int s);

/// Advects the carrier along `flow` (H×W×2 pixels) and returns the new
/// carrier, which is also stored in `state`.
const Latent& warp_noise(NoiseState& state, std::span<const float> flow, int width, int height);

/// α·a + sqrt(1 − α²)·b elementwise.
Latent sdedit_mix(const Latent& preview_latent, const Latent& z_flow, double alpha);

/// Stand-in encoder: mean-pool RGB by s, channel k takes pooled colour k mod 3,
/// then zero mean / unit variance over the frame (all zeros if constant).
Latent encode_preview(std::span<const std::uint8_t> rgb, int width, int height, int s = 8, int channels = 16);

//! Pluggable frame generator at the end of the conditioning pipeline.
class Generator {
 public:
  virtual ~Generator() = default;
  /// Returns an RGB8 frame of the conditioning size. Throws on failure.
  virtual std::vector<std::uint8_t> generate(const ConditioningFrame& conditioning, const std::string& prompt,
                                             std::span<const std::vector<std::uint8_t>> history) = 0;
  virtual std::string name() const = 0;
};

//! Passes the coarse preview through unchanged.
class StubGenerator final : public Generator {
 public:
  std::vector<std::uint8_t> generate(const ConditioningFrame& conditioning, const std::string&,
                                     std::span<const std::vector<std::uint8_t>>) override {
    return conditioning.preview;
  }
  std::string name() const override { return "stub"; }
};

struct GeneratedFrame {
  std::vector<std::uint8_t> rgb;
  bool fallback = false;  // plugin failed and the stub output was used
  std::string error;
};

/// Calls `plugin` and falls back to the stub if it throws or returns a frame
/// of the wrong size.
GeneratedFrame generate_with_fallback(Generator* plugin, const ConditioningFrame& conditioning,
                                      const std::string& prompt, std::span<const std::vector<std::uint8_t>> history);

}  // namespace actionflow
