#include "actionflow/spatial_hash.hpp"

#include <algorithm>
#include <bit>

namespace actionflow {

namespace {

std::size_t table_capacity(std::size_t entries) { return std::bit_ceil(std::max<std::size_t>(16, entries * 2)); }

}  // namespace

void SpatialHash::insert(std::vector<Slot>& table, std::uint64_t key, std::uint32_t begin, std::uint32_t end) {
  const std::size_t mask = table.size() - 1;
  for (std::size_t i = mix(key) & mask;; i = (i + 1) & mask) {
    if (table[i].key == kEmpty || table[i].key == key) {
      table[i] = {key, begin, end};
      return;
    }
  }
}

const SpatialHash::Slot* SpatialHash::lookup(const std::vector<Slot>& table, std::uint64_t key) {
  if (table.empty()) return nullptr;
  const std::size_t mask = table.size() - 1;
  for (std::size_t i = mix(key) & mask;; i = (i + 1) & mask) {
    if (table[i].key == key) return &table[i];
    if (table[i].key == kEmpty) return nullptr;
  }
}

const SpatialHash::Slot* SpatialHash::find(std::uint64_t key) const { return lookup(table_, key); }

void SpatialHash::build(std::span<const Vec3> points, double cell_size) {
  cell_ = cell_size;
  inv_cell_ = 1.0 / cell_size;
  points_.assign(points.begin(), points.end());
  near_.clear();

  std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto c = cell_of(points[i].array());
    keyed[i] = {pack(c[0], c[1], c[2]), static_cast<std::uint32_t>(i)};
  }
  std::sort(keyed.begin(), keyed.end());

  order_.resize(keyed.size());
  std::size_t cells = 0;
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    order_[i] = keyed[i].second;
    if (i == 0 || keyed[i].first != keyed[i - 1].first) ++cells;
  }
  table_.assign(table_capacity(cells), Slot{});
  for (std::size_t i = 0; i < keyed.size();) {
    std::size_t j = i;
    while (j < keyed.size() && keyed[j].first == keyed[i].first) ++j;
    insert(table_, keyed[i].first, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    i = j;
  }
}

void SpatialHash::build_proximity() {
  if (!near_.empty() || order_.empty()) return;
  std::vector<std::uint64_t> keys;
  for (const auto& slot : table_) {
    if (slot.key == kEmpty) continue;
    const auto x = static_cast<std::int64_t>(slot.key & 0x1fffff) - kBias;
    const auto y = static_cast<std::int64_t>((slot.key >> 21) & 0x1fffff) - kBias;
    const auto z = static_cast<std::int64_t>((slot.key >> 42) & 0x1fffff) - kBias;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) keys.push_back(pack(x + dx, y + dy, z + dz));
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  near_.assign(table_capacity(keys.size()), Slot{});
  for (auto k : keys) insert(near_, k, 0, 0);
}

bool SpatialHash::maybe_near(const Vec3& p) const {
  if (order_.empty()) return false;
  if (near_.empty()) return true;
  const auto c = cell_of(p.array());
  return lookup(near_, pack(c[0], c[1], c[2])) != nullptr;
}

std::vector<std::uint32_t> SpatialHash::nearest(const Vec3& p, std::size_t k, std::uint32_t skip) const {
  std::vector<std::pair<double, std::uint32_t>> found;
  if (order_.empty() || k == 0) return {};
  const std::size_t available = order_.size() - (skip < order_.size() ? 1 : 0);
  k = std::min(k, available);
  if (k == 0) return {};
  // Grow the search cube until the k-th candidate is provably inside it; once
  // the cube spans more cells than there are points, scan everything.
  bool done = false;
  for (int ring = 1; !done; ++ring) {
    const double cells = std::pow(2.0 * ring + 1.0, 3);
    if (cells > 8.0 * static_cast<double>(order_.size()) + 27.0) break;
    found.clear();
    const double radius = ring * cell_;
    for_each_candidate(p, radius, [&](std::uint32_t j) {
      if (j != skip) found.emplace_back((points_[j] - p).squaredNorm(), j);
    });
    if (found.size() >= k) {
      std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k), found.end());
      done = std::sqrt(found[k - 1].first) <= radius;
    }
  }
  if (!done) {
    found.clear();
    for (std::uint32_t j = 0; j < points_.size(); ++j)
      if (j != skip) found.emplace_back((points_[j] - p).squaredNorm(), j);
    std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k), found.end());
  }
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < std::min(k, found.size()); ++i) out.push_back(found[i].second);
  return out;
}

}  // namespace actionflow
