// Solver-state construction for freshly unprojected objects.

#include "actionflow/error.hpp"
#include "actionflow/ingest.hpp"
#include "actionflow/physics.hpp"
#include "actionflow/spatial_hash.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace actionflow {

namespace {

constexpr std::size_t kElasticNeighbors = 6;
constexpr std::size_t kClothExtraNeighbors = 4;

// Cell size giving a handful of points per cell for k-nearest queries.
double query_cell(std::span<const Vec3> pts) {
  Aabb box;
  for (const auto& p : pts) box.extend(p);
  const double diag = (box.hi - box.lo).norm();
  return std::max(1e-4, diag / std::cbrt(static_cast<double>(pts.size())));
}

double angle_at(const Vec3& a, const Vec3& mid, const Vec3& b) {
  const Vec3 e1 = a - mid, e2 = b - mid;
  return std::atan2(e1.cross(e2).norm(), e1.dot(e2));
}

void add_edge(std::set<std::pair<std::uint32_t, std::uint32_t>>& seen, PbdState& pbd, const DynamicObject& obj,
              std::uint32_t a, std::uint32_t b) {
  if (a == b) return;
  const auto key = std::minmax(a, b);
  if (!seen.insert(key).second) return;
  pbd.edges.push_back({key.first, key.second, (obj.positions[a] - obj.positions[b]).norm()});
}

// Greedy colouring: each constraint takes the lowest colour none of its
// particles has used yet. Returns the batch offsets and reorders `items`.
template <class T, class Ids>
std::vector<std::uint32_t> color_list(std::vector<T>& items, std::size_t particles, Ids ids) {
  std::vector<std::vector<bool>> used(particles);
  std::vector<std::uint32_t> color(items.size());
  std::uint32_t n_colors = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto members = ids(items[k]);
    std::uint32_t c = 0;
    for (;; ++c) {
      bool free = true;
      for (auto m : members)
        if (c < used[m].size() && used[m][c]) free = false;
      if (free) break;
    }
    for (auto m : members) {
      if (used[m].size() <= c) used[m].resize(c + 1, false);
      used[m][c] = true;
    }
    color[k] = c;
    n_colors = std::max(n_colors, c + 1);
  }
  std::vector<std::uint32_t> offsets(n_colors + 1, 0);
  for (auto c : color) ++offsets[c + 1];
  for (std::uint32_t c = 0; c < n_colors; ++c) offsets[c + 1] += offsets[c];
  std::vector<T> sorted(items.size());
  auto cursor = offsets;
  for (std::size_t k = 0; k < items.size(); ++k) sorted[cursor[color[k]]++] = items[k];
  items.swap(sorted);
  return offsets;
}

}  // namespace

void color_constraints(PbdState& pbd, std::size_t particles) {
  pbd.edge_colors = color_list(pbd.edges, particles, [](const Edge& e) { return std::array{e.a, e.b}; });
  pbd.bend_colors = color_list(pbd.bends, particles, [](const Bend& b) { return std::array{b.a, b.mid, b.b}; });
  pbd.tet_colors = color_list(pbd.tets, particles, [](const Tet& t) { return std::array{t.v[0], t.v[1], t.v[2], t.v[3]}; });
}

void init_rigid(DynamicObject& obj) {
  RigidState rigid;
  rigid.rest_positions = obj.positions;
  double m = 0.0;
  for (std::size_t i = 0; i < obj.size(); ++i) {
    rigid.rest_center += obj.masses[i] * obj.positions[i];
    m += obj.masses[i];
  }
  rigid.rest_center /= m;
  Mat3 cov = Mat3::Zero();
  for (const auto& p : obj.positions) cov += (p - rigid.rest_center) * (p - rigid.rest_center).transpose();
  const Vec3 sv = Eigen::JacobiSVD<Mat3>(cov).singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= 1e-9 * sv[0])
    throw Error(ErrorCode::DegenerateObject, "rigid object is collinear");
  obj.solver = std::move(rigid);
}

void init_elastic(DynamicObject& obj) {
  PbdState pbd;
  const SpatialHash hash(obj.positions, query_cell(obj.positions));
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  std::set<std::array<std::uint32_t, 4>> tets;
  for (std::uint32_t i = 0; i < obj.size(); ++i) {
    const auto nb = hash.nearest(obj.positions[i], kElasticNeighbors, i);
    for (auto j : nb) add_edge(seen, pbd, obj, i, j);

    // Bending: the most opposite neighbour pair around i.
    double best = 2.0;
    std::pair<std::uint32_t, std::uint32_t> pair{0, 0};
    for (std::size_t a = 0; a < nb.size(); ++a)
      for (std::size_t b = a + 1; b < nb.size(); ++b) {
        const Vec3 e1 = (obj.positions[nb[a]] - obj.positions[i]).normalized();
        const Vec3 e2 = (obj.positions[nb[b]] - obj.positions[i]).normalized();
        const double c = e1.dot(e2);
        if (c < best) best = c, pair = {nb[a], nb[b]};
      }
    if (best < 2.0)
      pbd.bends.push_back({pair.first, i, pair.second, 0,
                           angle_at(obj.positions[pair.first], obj.positions[i], obj.positions[pair.second])});

    // Volume: i with its three nearest neighbours, skipping flat tetrahedra.
    if (nb.size() >= 3) {
      std::array<std::uint32_t, 4> t{i, nb[0], nb[1], nb[2]};
      const Vec3& p0 = obj.positions[t[0]];
      const Vec3 d1 = obj.positions[t[1]] - p0, d2 = obj.positions[t[2]] - p0, d3 = obj.positions[t[3]] - p0;
      const double vol = d1.dot(d2.cross(d3)) / 6.0;
      const double l = (d1.norm() + d2.norm() + d3.norm()) / 3.0;
      std::array<std::uint32_t, 4> key = t;
      std::sort(key.begin(), key.end());
      if (std::abs(vol) > 1e-3 * l * l * l && tets.insert(key).second)
        pbd.tets.push_back({{t[0], t[1], t[2], t[3]}, vol});
    }
  }
  color_constraints(pbd, obj.size());
  pbd.built = true;
  obj.solver = std::move(pbd);
}

void init_cloth(DynamicObject& obj, std::span<const PixelCoord> pixel_grid) {
  PbdState pbd;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  const std::size_t gridded = std::min(pixel_grid.size(), obj.size());
  std::map<std::pair<int, int>, std::uint32_t> at;
  for (std::uint32_t i = 0; i < gridded; ++i) at[{pixel_grid[i].u, pixel_grid[i].v}] = i;
  auto find = [&](int u, int v) -> std::int64_t {
    const auto it = at.find({u, v});
    return it == at.end() ? std::int64_t{-1} : std::int64_t{it->second};
  };
  for (std::uint32_t i = 0; i < gridded; ++i) {
    const int u = pixel_grid[i].u, v = pixel_grid[i].v;
    for (auto [du, dv] : {std::pair{1, 0}, {0, 1}, {1, 1}, {1, -1}}) {
      const auto j = find(u + du, v + dv);
      if (j >= 0) add_edge(seen, pbd, obj, i, static_cast<std::uint32_t>(j));
    }
    for (auto [du, dv] : {std::pair{1, 0}, {0, 1}}) {
      const auto a = find(u - du, v - dv), b = find(u + du, v + dv);
      if (a >= 0 && b >= 0)
        pbd.bends.push_back({static_cast<std::uint32_t>(a), i, static_cast<std::uint32_t>(b), 0,
                             angle_at(obj.positions[a], obj.positions[i], obj.positions[b])});
    }
  }
  // Particles without a pixel (occluded side, or no grid given) hang on k-NN edges.
  if (gridded < obj.size()) {
    const SpatialHash hash(obj.positions, query_cell(obj.positions));
    for (auto i = static_cast<std::uint32_t>(gridded); i < obj.size(); ++i)
      for (auto j : hash.nearest(obj.positions[i], kClothExtraNeighbors, i)) add_edge(seen, pbd, obj, i, j);
  }
  color_constraints(pbd, obj.size());
  pbd.built = true;
  obj.solver = std::move(pbd);
}

void init_smoke(DynamicObject& obj, double particle_size) {
  PbdState pbd;
  const SpatialHash hash(obj.positions, query_cell(obj.positions));
  std::vector<double> spacing;
  spacing.reserve(obj.size());
  for (std::uint32_t i = 0; i < obj.size(); ++i) {
    const auto nb = hash.nearest(obj.positions[i], 1, i);
    if (!nb.empty()) spacing.push_back((obj.positions[nb[0]] - obj.positions[i]).norm());
  }
  double median = 0.0;
  if (!spacing.empty()) {
    std::nth_element(spacing.begin(), spacing.begin() + spacing.size() / 2, spacing.end());
    median = spacing[spacing.size() / 2];
  }
  pbd.kernel_radius = std::max(2.0 * particle_size, 2.0 * median);
  const auto rho = kernel_densities(obj.positions, pbd.kernel_radius);
  double mean = 0.0;
  for (double r : rho) mean += r;
  pbd.rest_density = mean / static_cast<double>(rho.size());
  color_constraints(pbd, obj.size());
  pbd.built = true;
  obj.solver = std::move(pbd);
}

void init_mpm(DynamicObject& obj, double particle_size) {
  MpmState mpm;
  mpm.deformation.assign(obj.size(), Mat3::Identity());
  mpm.affine.assign(obj.size(), Mat3::Zero());
  mpm.stress.assign(obj.size(), Mat3::Zero());  // F = I is unstressed
  mpm.volume.assign(obj.size(), particle_size * particle_size * particle_size);
  obj.solver = std::move(mpm);
}

}  // namespace actionflow
