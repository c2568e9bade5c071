#pragma once

#include "actionflow/math.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace actionflow {

//! Uniform-grid point index with an open-addressing cell table. Points are
//! stored sorted by cell, ties broken by index, so iteration order is
//! deterministic.
class SpatialHash {
 public:
  SpatialHash() = default;
  SpatialHash(std::span<const Vec3> points, double cell_size) { build(points, cell_size); }

  void build(std::span<const Vec3> points, double cell_size);
  /// Marks every cell within one cell of an occupied cell, enabling
  /// maybe_near(). Idempotent.
  void build_proximity();

  double cell_size() const { return cell_; }
  bool empty() const { return order_.empty(); }
  std::size_t size() const { return order_.size(); }

  /// False only if no indexed point lies within cell_size() of p.
  bool maybe_near(const Vec3& p) const;

  /// Calls fn(index) for every point in the cells overlapping the cube of
  /// half-width `radius` around p. Callers filter by exact distance.
  template <class Fn>
  void for_each_candidate(const Vec3& p, double radius, Fn&& fn) const {
    if (order_.empty()) return;
    const auto lo = cell_of(p.array() - radius);
    const auto hi = cell_of(p.array() + radius);
    for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
        for (std::int64_t z = lo[2]; z <= hi[2]; ++z) {
          const Slot* s = find(pack(x, y, z));
          if (!s) continue;
          for (std::uint32_t k = s->begin; k < s->end; ++k) fn(order_[k]);
        }
  }

  /// k nearest indexed points to p (excluding `skip`), sorted by (distance, index).
  std::vector<std::uint32_t> nearest(const Vec3& p, std::size_t k, std::uint32_t skip = UINT32_MAX) const;

 private:
  struct Slot {
    std::uint64_t key = kEmpty;
    std::uint32_t begin = 0, end = 0;
  };
  static constexpr std::uint64_t kEmpty = ~0ull;
  static constexpr std::int64_t kBias = 1 << 20;

  std::array<std::int64_t, 3> cell_of(const Eigen::Array3d& p) const {
    return {static_cast<std::int64_t>(std::floor(p[0] * inv_cell_)),
            static_cast<std::int64_t>(std::floor(p[1] * inv_cell_)),
            static_cast<std::int64_t>(std::floor(p[2] * inv_cell_))};
  }
  static std::uint64_t pack(std::int64_t x, std::int64_t y, std::int64_t z) {
    auto c = [](std::int64_t v) { return static_cast<std::uint64_t>((v + kBias) & 0x1fffff); };
    return c(x) | (c(y) << 21) | (c(z) << 42);
  }
  static std::uint64_t mix(std::uint64_t k) {
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdull;
    k ^= k >> 33;
    return k;
  }
  const Slot* find(std::uint64_t key) const;
  static void insert(std::vector<Slot>& table, std::uint64_t key, std::uint32_t begin, std::uint32_t end);
  static const Slot* lookup(const std::vector<Slot>& table, std::uint64_t key);

  double cell_ = 1.0, inv_cell_ = 1.0;
  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Slot> table_;
  std::vector<Slot> near_;
};

}  // namespace actionflow
