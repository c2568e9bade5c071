// Explicit MLS-MPM with APIC transfers and quadratic B-spline weights.
// Liquids use the volumetric part of fixed-corotated elasticity; granular
// media use Hencky-strain St. Venant-Kirchhoff with Drucker-Prager plasticity.

#include "actionflow/error.hpp"
#include "actionflow/physics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace actionflow {

namespace {

struct Lame {
  double mu, lambda;
};

Lame lame(const MaterialParams& m) {
  const double e = m.youngs_modulus, nu = m.poissons_ratio;
  Lame l{e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))};
  if (m.cls == MaterialClass::Liquid) l.mu = 0.0;
  return l;
}

// Rotation-preserving SVD from the eigen-decomposition of FᵀF: U and V are
// proper rotations, the sign of an inversion ends up in sigma[2]. Much cheaper
// than Jacobi sweeps and accurate enough once singular values are clamped.
void svd3(const Mat3& f, Mat3& u, Vec3& sigma, Mat3& v) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig;
  eig.computeDirect(f.transpose() * f);
  v = eig.eigenvectors().rowwise().reverse();  // descending singular values
  if (v.determinant() < 0.0) v.col(2) *= -1.0;
  const Mat3 b = f * v;
  sigma[0] = b.col(0).norm();
  u.col(0) = sigma[0] > 1e-12 ? Vec3(b.col(0) / sigma[0]) : Vec3::UnitX();
  Vec3 u1 = b.col(1) - u.col(0).dot(b.col(1)) * u.col(0);
  if (u1.norm() < 1e-12) u1 = u.col(0).unitOrthogonal();
  u.col(1) = u1.normalized();
  u.col(2) = u.col(0).cross(u.col(1));
  sigma[1] = u.col(1).dot(b.col(1));
  sigma[2] = u.col(2).dot(b.col(2));
}

struct Constitutive {
  MaterialClass cls;
  Lame lame;
  double dp_alpha = 0.0;  // Drucker-Prager cone coefficient

  explicit Constitutive(const MaterialParams& m) : cls(m.cls), lame(actionflow::lame(m)) {
    const double s = std::sin(m.friction_angle * std::numbers::pi / 180.0);
    dp_alpha = std::sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s);
  }

  // Kirchhoff stress tau = P Fᵀ for Hencky strain eps and left rotation u.
  Mat3 hencky_stress(const Mat3& u, const Vec3& eps) const {
    const Vec3 tau = 2.0 * lame.mu * eps + Vec3::Constant(lame.lambda * eps.sum());
    return u * tau.asDiagonal() * u.transpose();
  }

  Vec3 hencky(const Vec3& sigma) const { return sigma.cwiseAbs().cwiseMax(1e-6).array().log().matrix(); }

  Mat3 kirchhoff(const Mat3& f) const {
    if (cls == MaterialClass::Liquid) {
      const double j = f.determinant();
      return Mat3::Identity() * (lame.lambda * (j - 1.0) * j);
    }
    Mat3 u, v;
    Vec3 sigma;
    svd3(f, u, sigma, v);
    return hencky_stress(u, hencky(sigma));
  }

  // Plastic projection of the trial deformation gradient f (updated in place);
  // returns the Kirchhoff stress of the projected state.
  Mat3 project(Mat3& f) const {
    if (cls == MaterialClass::Liquid) {
      const double j = f.determinant();
      f = Mat3::Identity() * std::cbrt(j);
      return Mat3::Identity() * (lame.lambda * (j - 1.0) * j);
    }
    Mat3 u, v;
    Vec3 sigma;
    svd3(f, u, sigma, v);
    Vec3 eps = hencky(sigma);
    const double tr = eps.sum();
    if (tr >= 0.0) {
      eps.setZero();  // separation: no cohesion
    } else {
      const Vec3 dev = eps - Vec3::Constant(tr / 3.0);
      const double dev_norm = dev.norm();
      const double dgamma =
          dev_norm + (3.0 * lame.lambda + 2.0 * lame.mu) / (2.0 * lame.mu) * tr * dp_alpha;
      if (dgamma > 0.0 && dev_norm > 1e-12) eps -= dgamma * dev / dev_norm;
    }
    f = u * eps.array().exp().matrix().asDiagonal() * v.transpose();
    return hencky_stress(u, eps);
  }
};

struct Stencil {
  std::array<int, 3> base;
  Eigen::Array3d fx;
  std::array<Eigen::Array3d, 3> w;  // w[k][axis]
};

Stencil stencil(const MpmGrid& grid, const Vec3& x) {
  Stencil s;
  const Eigen::Array3d g = (x - grid.origin).array() / grid.cell_size;
  for (int a = 0; a < 3; ++a) s.base[a] = static_cast<int>(std::floor(g[a] - 0.5));
  s.fx = g - Eigen::Array3d(s.base[0], s.base[1], s.base[2]);
  s.w[0] = 0.5 * (1.5 - s.fx).square();
  s.w[1] = 0.75 - (s.fx - 1.0).square();
  s.w[2] = 0.5 * (s.fx - 0.5).square();
  return s;
}

// Keeps the 3x3x3 stencil inside the grid; returns true if x was moved.
bool clamp_to_grid(const MpmGrid& grid, Vec3& x) {
  bool moved = false;
  for (int a = 0; a < 3; ++a) {
    const double lo = grid.origin[a] + 1.0 * grid.cell_size;
    const double hi = grid.origin[a] + (grid.dims[a] - 2.0) * grid.cell_size - 1e-9 * grid.cell_size;
    if (x[a] < lo) x[a] = lo, moved = true;
    if (x[a] > hi) x[a] = hi, moved = true;
  }
  return moved;
}

void mark_active(MpmGrid& grid, const std::vector<Stencil>& stencils) {
  if (++grid.epoch == 0) {
    std::fill(grid.stamp.begin(), grid.stamp.end(), 0u);
    grid.epoch = 1;
  }
  grid.active.clear();
  for (const auto& s : stencils)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const auto idx = grid.index(s.base[0] + i, s.base[1] + j, s.base[2] + k);
          if (grid.stamp[idx] != grid.epoch) {
            grid.stamp[idx] = grid.epoch;
            grid.mass[idx] = 0.0;
            grid.momentum[idx].setZero();
            grid.active.push_back(static_cast<std::uint32_t>(idx));
          }
        }
  // Sorted order makes the grid update independent of particle order.
  std::sort(grid.active.begin(), grid.active.end());
}

void scatter(MpmGrid& grid, const Stencil& s, double mass, const Vec3& momentum, const Mat3& affine) {
  // momentum + affine * (node - x_p), expanded so the per-node work is a few axpys.
  const Mat3 a_dx = affine * grid.cell_size;
  const Vec3 q0 = momentum - a_dx * s.fx.matrix();
  const std::size_t sx = static_cast<std::size_t>(grid.dims[1]) * grid.dims[2];
  const std::size_t sy = grid.dims[2];
  const std::size_t origin = grid.index(s.base[0], s.base[1], s.base[2]);
  for (int i = 0; i < 3; ++i) {
    const Vec3 qi = q0 + i * a_dx.col(0);
    for (int j = 0; j < 3; ++j) {
      const double wij = s.w[i][0] * s.w[j][1];
      const Vec3 qij = qi + j * a_dx.col(1);
      const std::size_t row = origin + i * sx + j * sy;
      for (int k = 0; k < 3; ++k) {
        const double weight = wij * s.w[k][2];
        grid.momentum[row + k] += weight * (qij + k * a_dx.col(2));
        grid.mass[row + k] += weight * mass;
      }
    }
  }
}

void grid_update(MpmGrid& grid, double friction, bool open_boundary, Exec exec) {
  for_each_index(exec, grid.active.size(), [&](std::size_t a) {
    const auto idx = grid.active[a];
    const double m = grid.mass[idx];
    if (m <= 0.0) {
      grid.momentum[idx].setZero();
      return;
    }
    Vec3 v = grid.momentum[idx] / m;
    if (!open_boundary) {
      const int z = static_cast<int>(idx % grid.dims[2]);
      const int y = static_cast<int>((idx / grid.dims[2]) % grid.dims[1]);
      const int x = static_cast<int>(idx / (static_cast<std::size_t>(grid.dims[2]) * grid.dims[1]));
      const std::array<int, 3> c{x, y, z};
      for (int ax = 0; ax < 3; ++ax) {
        if (c[ax] < 3 && v[ax] < 0.0) v[ax] = 0.0;
        if (c[ax] >= grid.dims[ax] - 3 && v[ax] > 0.0) v[ax] = 0.0;
      }
      if (grid.solid[idx]) {
        const Vec3 n = grid.solid_normal[idx].cast<double>();
        if (n.squaredNorm() < 0.5) {
          v.setZero();
        } else {
          const double vn = v.dot(n);
          if (vn < 0.0) {
            Vec3 vt = v - vn * n;
            const double vt_norm = vt.norm();
            const double scale = vt_norm > 0.0 ? std::max(0.0, 1.0 + friction * vn / vt_norm) : 0.0;
            v = vt * scale;
          }
        }
      }
    }
    grid.momentum[idx] = v;
  });
}

}  // namespace

double mpm_stable_dt(const MaterialParams& material, double cell_size, double cfl, double max_speed) {
  const auto l = lame(material);
  const double wave = std::sqrt((l.lambda + 2.0 * l.mu) / material.density);
  return cfl * cell_size / (wave + max_speed);
}

MpmGrid MpmGrid::for_scene(const SceneState& scene, const SimConfig& config) {
  Aabb all;
  for (const auto& p : scene.background.positions) all.extend(p);
  Aabb mpm_box;
  for (const auto& obj : scene.objects) {
    for (const auto& p : obj.positions) all.extend(p);
    if (is_mpm(obj.material.cls))
      for (const auto& p : obj.positions) mpm_box.extend(p);
  }
  if (mpm_box.empty()) return {};

  double dx = 1.0 / config.mpm_grid_density;
  auto dims_for = [&](const Aabb& box, double cell) {
    const Vec3 ext = box.hi - box.lo;
    std::array<int, 3> d;
    for (int a = 0; a < 3; ++a) d[a] = static_cast<int>(std::ceil(ext[a] / cell)) + 1;
    return d;
  };
  auto cells = [](const std::array<int, 3>& d) {
    return static_cast<double>(d[0]) * d[1] * d[2];
  };
  auto dilate = [&](const Aabb& box, double fraction, double min_margin) {
    const Vec3 margin = ((box.hi - box.lo) * fraction).cwiseMax(Vec3::Constant(min_margin));
    return Aabb{box.lo - margin, box.hi + margin};
  };

  Aabb domain = dilate(all, 0.1, 4.0 * dx);
  const auto max_cells = static_cast<double>(config.mpm_max_cells);
  if (cells(dims_for(domain, dx)) > max_cells) {
    // Fall back to the region the MPM material can plausibly reach.
    Aabb reach = dilate(mpm_box, 0.5, 0.5);
    reach.lo = reach.lo.cwiseMax(domain.lo);
    reach.hi = reach.hi.cwiseMin(domain.hi);
    domain = reach;
  }
  while (cells(dims_for(domain, dx)) > max_cells) dx *= 1.05;

  MpmGrid grid;
  grid.cell_size = dx;
  grid.origin = domain.lo;
  grid.dims = dims_for(domain, dx);
  const auto n = static_cast<std::size_t>(cells(grid.dims));
  grid.momentum.assign(n, Vec3::Zero());
  grid.mass.assign(n, 0.0);
  grid.stamp.assign(n, 0u);
  grid.solid.assign(n, 0);
  grid.solid_normal.assign(n, Vec3f::Zero());

  auto node_of = [&](const Vec3& p, std::array<int, 3>& c) {
    for (int a = 0; a < 3; ++a) {
      c[a] = static_cast<int>(std::lround((p[a] - grid.origin[a]) / dx));
      if (c[a] < 0 || c[a] >= grid.dims[a]) return false;
    }
    return true;
  };
  std::vector<std::uint32_t> solid_nodes;
  for (const auto& p : scene.background.positions) {
    std::array<int, 3> c;
    if (!node_of(p, c)) continue;
    const auto idx = grid.index(c[0], c[1], c[2]);
    if (!grid.solid[idx]) solid_nodes.push_back(static_cast<std::uint32_t>(idx));
    grid.solid[idx] = 1;
  }
  // Background colliders are depth surfaces: estimate the local plane from the
  // neighbouring solid nodes and orient it toward the camera.
  const Vec3 eye = scene.camera.to_world(Vec3::Zero());
  for (const auto idx : solid_nodes) {
    const int z = static_cast<int>(idx % grid.dims[2]);
    const int y = static_cast<int>((idx / grid.dims[2]) % grid.dims[1]);
    const int x = static_cast<int>(idx / (static_cast<std::size_t>(grid.dims[2]) * grid.dims[1]));
    Mat3 cov = Mat3::Zero();
    int count = 0;
    for (int i = -2; i <= 2; ++i)
      for (int j = -2; j <= 2; ++j)
        for (int k = -2; k <= 2; ++k) {
          const int xi = x + i, yj = y + j, zk = z + k;
          if (xi < 0 || yj < 0 || zk < 0 || xi >= grid.dims[0] || yj >= grid.dims[1] || zk >= grid.dims[2]) continue;
          if (!grid.solid[grid.index(xi, yj, zk)]) continue;
          const Vec3 d(i, j, k);
          cov += d * d.transpose();
          ++count;
        }
    if (count < 3) continue;
    Eigen::SelfAdjointEigenSolver<Mat3> eig;
    eig.computeDirect(cov);
    const auto ev = eig.eigenvalues();
    if (ev[0] > 0.25 * ev[1]) continue;  // not plate-like: treat as interior
    Vec3 n = eig.eigenvectors().col(0);
    const Vec3 node = grid.origin + dx * Vec3(x, y, z);
    if (n.dot(eye - node) < 0.0) n = -n;
    grid.solid_normal[idx] = n.cast<float>();
  }
  return grid;
}

void mpm_substep(DynamicObject& obj, MpmGrid& grid, double dt_sub, std::span<const Vec3> accel,
                 const SimConfig& config, StepReport* report) {
  auto* mpm = std::get_if<MpmState>(&obj.solver);
  if (!mpm || mpm->deformation.size() != obj.size())
    throw Error(ErrorCode::DegenerateObject, "MPM object without particle state");
  if (grid.cell_count() == 0) throw Error(ErrorCode::InvalidArgument, "MPM grid not initialised");

  const std::size_t n = obj.size();
  const Constitutive model(obj.material);
  const double dx = grid.cell_size;
  const double inv_d = 4.0 / (dx * dx);

  double max_speed = 0.0;
  for (const auto& v : obj.velocities) max_speed = std::max(max_speed, v.norm());
  const double stable = mpm_stable_dt(obj.material, dx, config.mpm_cfl, max_speed);
  const int cycles = std::max(1, static_cast<int>(std::ceil(dt_sub / stable - 1e-9)));
  const double dt = dt_sub / cycles;
  if (report) report->mpm_subcycles = std::max(report->mpm_subcycles, cycles);

  std::vector<Stencil> stencils(n);
  auto& stress = mpm->stress;
  if (stress.size() != n) {
    stress.resize(n);
    for_each_index(config.exec, n, [&](std::size_t p) { stress[p] = model.kirchhoff(mpm->deformation[p]); });
  }

  // Slab coloring for the parallel scatter: particles whose base cell lies in
  // slabs of the same parity never write the same node.
  constexpr int kSlab = 4;
  const int slabs = grid.dims[0] / kSlab + 1;

  for (int cycle = 0; cycle < cycles; ++cycle) {
    std::size_t clamped = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (clamp_to_grid(grid, obj.positions[p])) ++clamped;
      stencils[p] = stencil(grid, obj.positions[p]);
    }
    if (report) report->clamped_particles += clamped;
    mark_active(grid, stencils);

    auto scatter_particle = [&](std::size_t p) {
      const double m = obj.masses[p];
      const Mat3 affine = (-dt * mpm->volume[p] * inv_d) * stress[p] + m * mpm->affine[p];
      scatter(grid, stencils[p], m, m * (obj.velocities[p] + dt * accel[p]), affine);
    };
    if (config.exec == Exec::Parallel) {
      std::vector<std::uint32_t> offsets(slabs + 1, 0), order(n);
      for (std::size_t p = 0; p < n; ++p) ++offsets[stencils[p].base[0] / kSlab + 1];
      for (int s = 0; s < slabs; ++s) offsets[s + 1] += offsets[s];
      std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
      for (std::size_t p = 0; p < n; ++p) order[cursor[stencils[p].base[0] / kSlab]++] = static_cast<std::uint32_t>(p);
      for (int parity = 0; parity < 2; ++parity) {
        AF_OMP(parallel for schedule(dynamic, 1))
        for (int s = parity; s < slabs; s += 2)
          for (auto k = offsets[s]; k < offsets[s + 1]; ++k) scatter_particle(order[k]);
      }
    } else {
      for (std::size_t p = 0; p < n; ++p) scatter_particle(p);
    }

    grid_update(grid, obj.material.friction_coefficient, config.mpm_open_boundary, config.exec);

    for_each_index(config.exec, n, [&](std::size_t p) {
      const auto& s = stencils[p];
      const std::size_t sx = static_cast<std::size_t>(grid.dims[1]) * grid.dims[2];
      const std::size_t sy = grid.dims[2];
      const std::size_t origin = grid.index(s.base[0], s.base[1], s.base[2]);
      // The weights are separable, so sum along k, then j, then i, carrying
      // the index-weighted partial sums needed for B = Σ w v (offset)ᵀ.
      Vec3 v = Vec3::Zero(), bi = Vec3::Zero(), bj = Vec3::Zero(), bk = Vec3::Zero();
      for (int i = 0; i < 3; ++i) {
        Vec3 a = Vec3::Zero(), aj = Vec3::Zero(), ak = Vec3::Zero();
        for (int j = 0; j < 3; ++j) {
          const Vec3* g = &grid.momentum[origin + i * sx + j * sy];
          const Vec3 r = s.w[0][2] * g[0] + s.w[1][2] * g[1] + s.w[2][2] * g[2];
          const Vec3 rk = s.w[1][2] * g[1] + 2.0 * s.w[2][2] * g[2];
          const double wj = s.w[j][1];
          a += wj * r;
          aj += (j * wj) * r;
          ak += wj * rk;
        }
        const double wi = s.w[i][0];
        v += wi * a;
        bi += (i * wi) * a;
        bj += wi * aj;
        bk += wi * ak;
      }
      Mat3 b;
      b << bi, bj, bk;
      b -= v * s.fx.matrix().transpose();
      b *= dx;
      const Mat3 c = inv_d * b;
      obj.velocities[p] = v;
      mpm->affine[p] = c;
      obj.positions[p] += dt * v;
      Mat3 f = (Mat3::Identity() + dt * c) * mpm->deformation[p];
      stress[p] = model.project(f);
      mpm->deformation[p] = f;
    });

    for (std::size_t p = 0; p < n; ++p) {
      if (!mpm->deformation[p].allFinite())
        throw Error(ErrorCode::NumericalBlowup, "non-finite deformation gradient");
    }
  }
}

}  // namespace actionflow
