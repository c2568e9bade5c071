// Extended position-based dynamics for elastic bodies, cloth and smoke.

#include "actionflow/error.hpp"
#include "actionflow/physics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace actionflow {

namespace {

constexpr double kSmokeRelaxation = 0.5;

// Applies one XPBD correction for a constraint with value c and gradients
// grads[k] on particles ids[k]. lambda is the accumulated multiplier.
template <std::size_t N>
void project(std::vector<Vec3>& x, std::span<const double> inv_mass, const std::array<std::uint32_t, N>& ids,
             const std::array<Vec3, N>& grads, double c, double alpha_tilde, double relaxation, double& lambda) {
  double denom = alpha_tilde;
  for (std::size_t k = 0; k < N; ++k) denom += inv_mass[ids[k]] * grads[k].squaredNorm();
  if (denom <= 0.0) return;
  const double dlambda = relaxation * (-c - alpha_tilde * lambda) / denom;
  lambda += dlambda;
  for (std::size_t k = 0; k < N; ++k) x[ids[k]] += (inv_mass[ids[k]] * dlambda) * grads[k];
}

void stretch_one(std::vector<Vec3>& x, std::span<const double> w, const Edge& edge, double& lambda,
                 double alpha_tilde, double relaxation) {
  const Vec3 d = x[edge.a] - x[edge.b];
  const double len = d.norm();
  if (len < 1e-12) return;
  const Vec3 n = d / len;
  project<2>(x, w, {edge.a, edge.b}, {n, Vec3(-n)}, len - edge.rest, alpha_tilde, relaxation, lambda);
}

void bend_one(std::vector<Vec3>& x, std::span<const double> w, const Bend& bend, double& lambda, double alpha_tilde,
              double relaxation) {
  const Vec3 e1 = x[bend.a] - x[bend.mid];
  const Vec3 e2 = x[bend.b] - x[bend.mid];
  const double l1 = e1.norm(), l2 = e2.norm();
  if (l1 < 1e-12 || l2 < 1e-12) return;
  const Vec3 u1 = e1 / l1, u2 = e2 / l2;
  const double sin_t = u1.cross(u2).norm();
  const double cos_t = u1.dot(u2);
  // The gradient direction is undefined for (anti)parallel edges.
  if (sin_t < 1e-6) return;
  const double theta = std::atan2(sin_t, cos_t);
  const Vec3 ga = (cos_t * u1 - u2) / (l1 * sin_t);
  const Vec3 gb = (cos_t * u2 - u1) / (l2 * sin_t);
  project<3>(x, w, {bend.a, bend.b, bend.mid}, {ga, gb, Vec3(-ga - gb)}, theta - bend.rest_angle, alpha_tilde,
             relaxation, lambda);
}

void volume_one(std::vector<Vec3>& x, std::span<const double> w, const Tet& tet, double& lambda, double alpha_tilde,
                double relaxation) {
  const Vec3& p0 = x[tet.v[0]];
  const Vec3 d1 = x[tet.v[1]] - p0, d2 = x[tet.v[2]] - p0, d3 = x[tet.v[3]] - p0;
  const double volume = d1.dot(d2.cross(d3)) / 6.0;
  const Vec3 g1 = d2.cross(d3) / 6.0;
  const Vec3 g2 = d3.cross(d1) / 6.0;
  const Vec3 g3 = d1.cross(d2) / 6.0;
  project<4>(x, w, {tet.v[0], tet.v[1], tet.v[2], tet.v[3]}, {Vec3(-g1 - g2 - g3), g1, g2, g3},
             volume - tet.rest_volume, alpha_tilde, relaxation, lambda);
}

// Gauss-Seidel over the list in stored order. Within a colour batch no two
// constraints share a particle, so a batch can be split across threads and
// still give the serial result bit for bit.
template <class T, class One>
void solve_batches(std::vector<Vec3>& x, std::span<const double> w, const std::vector<T>& items,
                   const std::vector<std::uint32_t>& colors, std::vector<double>& lambda, double alpha_tilde,
                   double relaxation, Exec exec, One one) {
  if (colors.size() < 2) {
    for (std::size_t k = 0; k < items.size(); ++k) one(x, w, items[k], lambda[k], alpha_tilde, relaxation);
    return;
  }
  constexpr std::size_t kMinParallelBatch = 256;
  for (std::size_t c = 0; c + 1 < colors.size(); ++c) {
    const std::size_t lo = colors[c], count = colors[c + 1] - lo;
    for_each_index(count >= kMinParallelBatch ? exec : Exec::Serial, count, [&](std::size_t k) {
      one(x, w, items[lo + k], lambda[lo + k], alpha_tilde, relaxation);
    });
  }
}

bool valid_batches(const std::vector<std::uint32_t>& colors, std::size_t size) {
  if (colors.empty()) return true;
  if (colors.front() != 0 || colors.back() != size) return false;
  return std::is_sorted(colors.begin(), colors.end());
}

double poly6(double r2, double h) {
  const double h2 = h * h;
  if (r2 >= h2) return 0.0;
  const double d = h2 - r2;
  return 315.0 / (64.0 * std::numbers::pi * std::pow(h, 9)) * d * d * d;
}

Vec3 spiky_gradient(const Vec3& r, double h) {
  const double len = r.norm();
  if (len >= h || len < 1e-12) return Vec3::Zero();
  const double d = h - len;
  return (-45.0 / (std::numbers::pi * std::pow(h, 6)) * d * d / len) * r;
}

struct Neighbors {
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> ids;
};

Neighbors find_neighbors(const std::vector<Vec3>& x, double radius) {
  SpatialHash hash(x, radius);
  Neighbors nb;
  nb.offsets.reserve(x.size() + 1);
  nb.offsets.push_back(0);
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < x.size(); ++i) {
    hash.for_each_candidate(x[i], radius, [&](std::uint32_t j) {
      if (j != i && (x[j] - x[i]).squaredNorm() < r2) nb.ids.push_back(j);
    });
    nb.offsets.push_back(static_cast<std::uint32_t>(nb.ids.size()));
  }
  return nb;
}

// Position-based fluids density projection, Jacobi style.
void solve_density(std::vector<Vec3>& x, const PbdState& pbd, std::span<const double> w, const Neighbors& nb,
                   Exec exec) {
  const double h = pbd.kernel_radius;
  const double rho0 = pbd.rest_density;
  const std::size_t n = x.size();
  std::vector<double> lambda(n, 0.0);
  for_each_index(exec, n, [&](std::size_t i) {
    double rho = poly6(0.0, h);
    Vec3 grad_i = Vec3::Zero();
    double sum_grad2 = 0.0;
    for (auto k = nb.offsets[i]; k < nb.offsets[i + 1]; ++k) {
      const auto j = nb.ids[k];
      const Vec3 r = x[i] - x[j];
      rho += poly6(r.squaredNorm(), h);
      const Vec3 g = spiky_gradient(r, h) / rho0;
      grad_i += g;
      sum_grad2 += g.squaredNorm();
    }
    sum_grad2 += grad_i.squaredNorm();
    const double c = rho / rho0 - 1.0;
    lambda[i] = w[i] > 0.0 && sum_grad2 > 0.0 ? -kSmokeRelaxation * c / sum_grad2 : 0.0;
  });
  std::vector<Vec3> delta(n, Vec3::Zero());
  for_each_index(exec, n, [&](std::size_t i) {
    if (w[i] == 0.0) return;
    Vec3 d = Vec3::Zero();
    for (auto k = nb.offsets[i]; k < nb.offsets[i + 1]; ++k) {
      const auto j = nb.ids[k];
      d += (lambda[i] + lambda[j]) * spiky_gradient(x[i] - x[j], h);
    }
    delta[i] = d / rho0;
  });
  for (std::size_t i = 0; i < n; ++i) x[i] += delta[i];
}

// XSPH velocity smoothing toward the kernel-weighted neighbour mean.
void smooth_velocities(std::vector<Vec3>& v, const std::vector<Vec3>& x, const Neighbors& nb, double h, double c,
                       Exec exec) {
  if (c <= 0.0) return;
  std::vector<Vec3> out(v.size());
  for_each_index(exec, v.size(), [&](std::size_t i) {
    Vec3 acc = Vec3::Zero();
    double wsum = 0.0;
    for (auto k = nb.offsets[i]; k < nb.offsets[i + 1]; ++k) {
      const auto j = nb.ids[k];
      const double wk = poly6((x[i] - x[j]).squaredNorm(), h);
      acc += wk * (v[j] - v[i]);
      wsum += wk;
    }
    out[i] = wsum > 0.0 ? Vec3(v[i] + c * acc / wsum) : v[i];
  });
  v.swap(out);
}

}  // namespace

std::vector<double> kernel_densities(std::span<const Vec3> positions, double kernel_radius) {
  const std::vector<Vec3> x(positions.begin(), positions.end());
  const auto nb = find_neighbors(x, kernel_radius);
  std::vector<double> rho(x.size(), poly6(0.0, kernel_radius));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (auto k = nb.offsets[i]; k < nb.offsets[i + 1]; ++k)
      rho[i] += poly6((x[i] - x[nb.ids[k]]).squaredNorm(), kernel_radius);
  return rho;
}

void pbd_substep(DynamicObject& obj, double dt_sub, std::span<const Vec3> accel, int iterations, Exec exec) {
  auto* pbd = std::get_if<PbdState>(&obj.solver);
  if (!pbd || !pbd->built) throw Error(ErrorCode::DegenerateObject, "PBD object without constraint topology");
  const auto& mat = obj.material;
  const bool smoke = mat.cls == MaterialClass::Smoke;
  if (smoke && (pbd->kernel_radius <= 0.0 || pbd->rest_density <= 0.0))
    throw Error(ErrorCode::DegenerateObject, "smoke object without rest density");

  if (!valid_batches(pbd->edge_colors, pbd->edges.size()) || !valid_batches(pbd->bend_colors, pbd->bends.size()) ||
      !valid_batches(pbd->tet_colors, pbd->tets.size()))
    throw Error(ErrorCode::DegenerateObject, "PBD colour batches do not cover the constraint lists");

  const std::size_t n = obj.size();
  std::vector<double> inv_mass(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool pinned = !pbd->pinned.empty() && pbd->pinned[i];
    inv_mass[i] = pinned ? 0.0 : 1.0 / obj.masses[i];
  }

  std::vector<Vec3> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (inv_mass[i] == 0.0) {
      obj.velocities[i].setZero();
      x[i] = obj.positions[i];
      continue;
    }
    obj.velocities[i] += dt_sub * accel[i];
    x[i] = obj.positions[i] + dt_sub * obj.velocities[i];
  }

  const double inv_dt2 = 1.0 / (dt_sub * dt_sub);
  std::vector<double> stretch_lambda(pbd->edges.size(), 0.0);
  std::vector<double> bend_lambda(pbd->bends.size(), 0.0);
  std::vector<double> volume_lambda(pbd->tets.size(), 0.0);
  Neighbors nb;
  if (smoke) nb = find_neighbors(x, pbd->kernel_radius);

  const std::vector<Vec3> predicted = x;
  for (int it = 0; it < iterations; ++it) {
    solve_batches(x, inv_mass, pbd->edges, pbd->edge_colors, stretch_lambda, mat.stretch_compliance * inv_dt2,
                  mat.stretch_relaxation, exec, stretch_one);
    solve_batches(x, inv_mass, pbd->bends, pbd->bend_colors, bend_lambda, mat.bending_compliance * inv_dt2,
                  mat.bending_relaxation, exec, bend_one);
    solve_batches(x, inv_mass, pbd->tets, pbd->tet_colors, volume_lambda, mat.volume_compliance * inv_dt2,
                  mat.volume_relaxation, exec, volume_one);
    if (smoke) solve_density(x, *pbd, inv_mass, nb, exec);
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (inv_mass[i] == 0.0) continue;
    // Equivalent to (x - x_old) / dt, but leaves unconstrained particles on
    // the exact symplectic-Euler trajectory.
    obj.velocities[i] += (x[i] - predicted[i]) / dt_sub;
    obj.positions[i] = x[i];
  }
  if (smoke) smooth_velocities(obj.velocities, obj.positions, nb, pbd->kernel_radius, mat.viscosity, exec);
}

}  // namespace actionflow
