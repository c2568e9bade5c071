// Z-buffered point splatting producing flow, preview and depth in one pass.

#include "actionflow/render.hpp"

#include "actionflow/error.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <limits>

namespace actionflow {

namespace {

constexpr std::uint64_t kEmptyKey = ~0ull;
constexpr double kNearPlane = 1e-6;

// Positive floats order like their bit patterns, so (depth bits, index)
// packs into a key whose minimum is the nearest point, lowest index first.
std::uint64_t splat_key(float depth, std::uint32_t index) {
  return (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(depth)) << 32) | index;
}

struct PointView {
  const Vec3* position;
  Vec3 velocity;
  Vec3f color;
};

// Flat view over background and dynamic points in a fixed order.
class PointList {
 public:
  explicit PointList(const SceneState& s) : state_(s) {
    offsets_.push_back(s.background.size());
    for (const auto& o : s.objects) offsets_.push_back(offsets_.back() + o.size());
  }
  std::size_t size() const { return offsets_.back(); }
  PointView operator[](std::size_t i) const {
    if (i < offsets_[0])
      return {&state_.background.positions[i], Vec3::Zero(), state_.background.colors[i]};
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), i);
    const std::size_t o = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    const auto& obj = state_.objects[o];
    const std::size_t k = i - offsets_[o];
    return {&obj.positions[k], obj.velocities[k], obj.colors[k]};
  }

 private:
  const SceneState& state_;
  std::vector<std::size_t> offsets_;
};

std::uint8_t to_u8(float c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0f, 1.0f) * 255.0f)); }

void atomic_min(std::uint64_t& slot, std::uint64_t key) {
  std::atomic_ref<std::uint64_t> ref(slot);
  std::uint64_t cur = ref.load(std::memory_order_relaxed);
  while (key < cur && !ref.compare_exchange_weak(cur, key, std::memory_order_relaxed)) {
  }
}

}  // namespace

void SplatConfig::validate() const {
  if (!(splat_radius >= 0.5)) throw Error(ErrorCode::InvalidArgument, "splat radius must be at least 0.5 px");
}

Projection project(const Vec3& point, const Camera& camera) {
  const Vec3 q = camera.to_camera(point);
  Projection p;
  p.depth = q.z();
  if (!(q.z() > kNearPlane)) return p;
  p.u = camera.fx * q.x() / q.z() + camera.cx;
  p.v = camera.fy * q.y() / q.z() + camera.cy;
  p.visible = std::isfinite(p.u) && std::isfinite(p.v);
  return p;
}

RenderBuffers render_frame(const SceneState& state, const Camera& now, const Camera& next, double dt,
                           const SplatConfig& config, Exec exec) {
  config.validate();
  if (now.width != next.width || now.height != next.height)
    throw Error(ErrorCode::ShapeError, "cameras disagree on image size");
  const int w = now.width, h = now.height;
  const std::size_t pixels = static_cast<std::size_t>(w) * h;
  const PointList points(state);
  if (points.size() >= std::numeric_limits<std::uint32_t>::max())
    throw Error(ErrorCode::InvalidArgument, "too many points to render");

  const double r = config.splat_radius;
  const double r2 = r * r;
  std::vector<std::uint64_t> zbuf(pixels, kEmptyKey);
  std::vector<Projection> proj(points.size());

  auto splat = [&](std::size_t i, auto&& write) {
    const auto pv = points[i];
    const auto p = project(*pv.position, now);
    proj[i] = p;
    if (!p.visible) return;
    const float depth = static_cast<float>(p.depth);
    if (!(depth > 0.0f) || !std::isfinite(depth)) return;
    const int x0 = std::max(0, static_cast<int>(std::ceil(p.u - r)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(p.u + r)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(p.v - r)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(p.v + r)));
    const std::uint64_t key = splat_key(depth, static_cast<std::uint32_t>(i));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - p.u, dy = y - p.v;
        if (dx * dx + dy * dy > r2) continue;
        write(zbuf[static_cast<std::size_t>(y) * w + x], key);
      }
  };
  if (exec == Exec::Parallel) {
    for_each_index(Exec::Parallel, points.size(),
                   [&](std::size_t i) { splat(i, [](std::uint64_t& slot, std::uint64_t key) { atomic_min(slot, key); }); });
  } else {
    for (std::size_t i = 0; i < points.size(); ++i)
      splat(i, [](std::uint64_t& slot, std::uint64_t key) { slot = std::min(slot, key); });
  }

  RenderBuffers out;
  out.width = w;
  out.height = h;
  out.flow.assign(pixels * 2, 0.0f);
  out.preview.assign(pixels * 3, 0);
  out.depth.assign(pixels, std::numeric_limits<float>::infinity());
  out.coverage.assign(pixels, 0);
  out.winner.assign(pixels, UINT32_MAX);
  const bool same_camera = now == next;
  for_each_index(exec, pixels, [&](std::size_t px) {
    const std::uint64_t key = zbuf[px];
    if (key == kEmptyKey) return;
    const auto i = static_cast<std::uint32_t>(key & 0xffffffffu);
    const auto pv = points[i];
    const auto& p = proj[i];
    out.winner[px] = i;
    out.coverage[px] = 1;
    out.depth[px] = std::bit_cast<float>(static_cast<std::uint32_t>(key >> 32));
    for (int c = 0; c < 3; ++c) out.preview[3 * px + c] = to_u8(pv.color[c]);
    // A point at rest under an unchanged camera has exactly zero flow.
    if (same_camera && pv.velocity.isZero(0.0)) return;
    const auto moved = project(*pv.position + dt * pv.velocity, next);
    if (!moved.visible) return;
    out.flow[2 * px] = static_cast<float>(moved.u - p.u);
    out.flow[2 * px + 1] = static_cast<float>(moved.v - p.v);
  });
  return out;
}

RenderBuffers render_flow(const SceneState& state, const Camera& now, const Camera& next, double dt,
                          const SplatConfig& config, Exec exec) {
  return render_frame(state, now, next, dt, config, exec);
}

RenderBuffers render_preview(const SceneState& state, const Camera& camera, const SplatConfig& config, Exec exec) {
  return render_frame(state, camera, camera, 0.0, config, exec);
}

ConditioningFrame to_conditioning_frame(RenderBuffers&& b, std::uint32_t frame_index, double sim_time) {
  ConditioningFrame f;
  f.width = b.width;
  f.height = b.height;
  f.flow = std::move(b.flow);
  f.preview = std::move(b.preview);
  f.depth = std::move(b.depth);
  f.coverage = std::move(b.coverage);
  f.frame_index = frame_index;
  f.sim_time = sim_time;
  return f;
}

}  // namespace actionflow
