// Flow-warped Gaussian noise carrier and latent mixing.

#include "actionflow/noise.hpp"

#include "actionflow/error.hpp"

#include <cmath>
#include <sstream>

namespace actionflow {

NoiseState NoiseState::create(int width, int height, std::uint64_t seed, const NoiseConfig& config) {
  if (config.downsample < 1 || config.channels < 1 || width < config.downsample || height < config.downsample)
    throw Error(ErrorCode::ShapeError, "frame smaller than one latent cell");
  NoiseState s;
  s.config = config;
  s.seed = seed;
  s.rng.seed(seed);
  s.carrier = Latent(height / config.downsample, width / config.downsample, config.channels);
  for (auto& v : s.carrier.data) v = s.normal(s.rng);
  return s;
}

std::string NoiseState::rng_state() const {
  std::ostringstream os;
  os << rng << ' ' << normal << ' ' << uniform;
  return os.str();
}

void NoiseState::restore_rng(const std::string& text) {
  std::istringstream is(text);
  is >> rng >> normal >> uniform;
  if (!is) throw Error(ErrorCode::IncompatibleSnapshot, "unreadable noise RNG state");
}

std::vector<float> pool_flow(std::span<const float> flow, int width, int height, int s) {
  if (flow.size() != static_cast<std::size_t>(width) * height * 2)
    throw Error(ErrorCode::ShapeError, "flow does not match the frame size");
  const int h = height / s, w = width / s;
  std::vector<float> out(static_cast<std::size_t>(h) * w * 2, 0.0f);
  const double scale = 1.0 / (static_cast<double>(s) * s * s);  // mean over the block, then pixels -> cells
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double fx = 0.0, fy = 0.0;
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx) {
          const std::size_t i = (static_cast<std::size_t>(y * s + dy) * width + (x * s + dx)) * 2;
          fx += flow[i];
          fy += flow[i + 1];
        }
      out[(static_cast<std::size_t>(y) * w + x) * 2] = static_cast<float>(fx * scale);
      out[(static_cast<std::size_t>(y) * w + x) * 2 + 1] = static_cast<float>(fy * scale);
    }
  return out;
}

const Latent& warp_noise(NoiseState& state, std::span<const float> flow, int width, int height) {
  const int s = state.config.downsample;
  const int h = state.carrier.h, w = state.carrier.w, c = state.carrier.c;
  if (height / s != h || width / s != w) throw Error(ErrorCode::ShapeError, "flow size does not match the carrier");
  const auto pooled = pool_flow(flow, width, height, s);

  const std::size_t cells = static_cast<std::size_t>(h) * w;
  std::vector<double> acc(cells * c, 0.0);
  std::vector<double> weight(cells, 0.0), weight2(cells, 0.0);
  auto deposit = [&](int y, int x, double wgt, const float* z) {
    if (wgt <= 0.0 || x < 0 || y < 0 || x >= w || y >= h) return;
    const std::size_t t = static_cast<std::size_t>(y) * w + x;
    weight[t] += wgt;
    weight2[t] += wgt * wgt;
    for (int k = 0; k < c; ++k) acc[t * c + k] += wgt * z[k];
  };

  // Serial: the stochastic mode draws from the shared RNG in cell order.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t src = static_cast<std::size_t>(y) * w + x;
      const double tx = x + pooled[2 * src], ty = y + pooled[2 * src + 1];
      if (!std::isfinite(tx) || !std::isfinite(ty)) continue;
      const double bx = std::floor(tx), by = std::floor(ty);
      const double ax = tx - bx, ay = ty - by;
      const int ix = static_cast<int>(bx), iy = static_cast<int>(by);
      const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      const int off[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
      const float* z = &state.carrier.data[src * c];
      if (state.config.mode == WarpMode::Bilinear || (ax == 0.0 && ay == 0.0)) {
        for (int k = 0; k < 4; ++k) deposit(iy + off[k][1], ix + off[k][0], wts[k], z);
      } else {
        const double pick = state.uniform(state.rng);
        double cum = 0.0;
        int chosen = 3;
        for (int k = 0; k < 4; ++k) {
          cum += wts[k];
          if (pick < cum) {
            chosen = k;
            break;
          }
        }
        deposit(iy + off[chosen][1], ix + off[chosen][0], 1.0, z);
      }
    }

  Latent next(h, w, c);
  for (std::size_t t = 0; t < cells; ++t) {
    if (weight[t] < state.config.refill_threshold) {
      for (int k = 0; k < c; ++k) next.data[t * c + k] = state.normal(state.rng);
      continue;
    }
    const double norm = std::sqrt(weight2[t]);
    for (int k = 0; k < c; ++k) next.data[t * c + k] = static_cast<float>(acc[t * c + k] / norm);
  }
  state.carrier = std::move(next);
  ++state.frame_index;
  return state.carrier;
}

Latent sdedit_mix(const Latent& a, const Latent& b, double alpha) {
  if (!a.same_shape(b)) throw Error(ErrorCode::ShapeError, "sdedit_mix operands differ in shape");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidAlpha, "alpha must lie in [0, 1]");
  const double beta = std::sqrt(1.0 - alpha * alpha);
  Latent out(a.h, a.w, a.c);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    out.data[i] = static_cast<float>(alpha * a.data[i] + beta * b.data[i]);
  return out;
}

Latent encode_preview(std::span<const std::uint8_t> rgb, int width, int height, int s, int channels) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw Error(ErrorCode::ShapeError, "preview does not match the frame size");
  const int h = height / s, w = width / s;
  Latent out(h, w, channels);
  std::vector<double> pooled(static_cast<std::size_t>(h) * w * 3, 0.0);
  const double inv = 1.0 / (255.0 * s * s);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx) {
          const std::size_t px = (static_cast<std::size_t>(y * s + dy) * width + (x * s + dx)) * 3;
          for (int k = 0; k < 3; ++k) pooled[(static_cast<std::size_t>(y) * w + x) * 3 + k] += rgb[px + k] * inv;
        }
  double mean = 0.0;
  std::vector<double> values(out.data.size());
  for (std::size_t cell = 0; cell < static_cast<std::size_t>(h) * w; ++cell)
    for (int k = 0; k < channels; ++k) {
      const double v = pooled[cell * 3 + k % 3];
      values[cell * channels + k] = v;
      mean += v;
    }
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  if (var < 1e-12) return out;  // constant frame
  const double inv_std = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < values.size(); ++i) out.data[i] = static_cast<float>((values[i] - mean) * inv_std);
  return out;
}

GeneratedFrame generate_with_fallback(Generator* plugin, const ConditioningFrame& conditioning,
                                      const std::string& prompt, std::span<const std::vector<std::uint8_t>> history) {
  GeneratedFrame out;
  if (plugin) {
    try {
      out.rgb = plugin->generate(conditioning, prompt, history);
      if (out.rgb.size() == conditioning.preview.size()) return out;
      out.error = plugin->name() + " returned a frame of the wrong size";
    } catch (const std::exception& e) {
      out.error = plugin->name() + ": " + e.what();
    }
    out.fallback = true;
  }
  StubGenerator stub;
  out.rgb = stub.generate(conditioning, prompt, history);
  return out;
}

}  // namespace actionflow
