// Particle-level contact projection between solver families, against the
// static background and against the kinematic gripper.

#include "actionflow/physics.hpp"

#include <algorithm>
#include <cmath>

namespace actionflow {

namespace {

constexpr int kBackgroundPasses = 4;

double inverse_mass(const DynamicObject& obj, std::size_t i) {
  if (const auto* pbd = std::get_if<PbdState>(&obj.solver))
    if (!pbd->pinned.empty() && pbd->pinned[i]) return 0.0;
  return 1.0 / obj.masses[i];
}

// Removes the approaching normal component of `v_rel` and applies Coulomb
// friction proportional to the removed normal speed.
Vec3 contact_velocity(const Vec3& v_rel, const Vec3& n, double mu) {
  const double vn = v_rel.dot(n);
  if (vn >= 0.0) return v_rel;
  const Vec3 vt = v_rel - vn * n;
  const double vt_norm = vt.norm();
  if (vt_norm <= 0.0) return Vec3::Zero();
  return vt * std::max(0.0, 1.0 - mu * (-vn) / vt_norm);
}

// Pushes x out of the h-ball of every nearby background point. Returns the
// accumulated contact normal (zero if there was no contact).
Vec3 push_out_of_background(Vec3& x, const SpatialHash& hash, std::span<const Vec3> points, double h) {
  Vec3 normal = Vec3::Zero();
  const double h2 = h * h;
  for (int pass = 0; pass < kBackgroundPasses; ++pass) {
    double best = h2;
    std::uint32_t closest = UINT32_MAX;
    hash.for_each_candidate(x, h, [&](std::uint32_t j) {
      const double d2 = (x - points[j]).squaredNorm();
      if (d2 < best || (d2 == best && j < closest && closest != UINT32_MAX)) {
        best = d2;
        closest = j;
      }
    });
    if (closest == UINT32_MAX) break;
    Vec3 d = x - points[closest];
    const double len = d.norm();
    // Coincident points carry no direction; push along +z, the usual "up".
    const Vec3 n = len > 1e-12 ? Vec3(d / len) : Vec3::UnitZ();
    x = points[closest] + h * n;
    normal += n;
  }
  const double len = normal.norm();
  return len > 0.0 ? Vec3(normal / len) : Vec3::Zero();
}

// Rigid bodies only record their contacts here; the velocity response is
// solved on the whole body once positions are rigid again.
using RigidContacts = std::vector<std::vector<RigidContact>>;

std::size_t background_contacts(SceneState& state, const SimConfig& config, const CollisionContext& ctx,
                                std::vector<std::uint8_t>& touched, RigidContacts& rigid_contacts) {
  if (!ctx.background || ctx.background->empty()) return 0;
  const double h = config.particle_size;
  std::size_t total = 0;
  for (std::size_t o = 0; o < state.objects.size(); ++o) {
    auto& obj = state.objects[o];
    const double mu = obj.material.friction_coefficient;
    const bool rigid = obj.material.cls == MaterialClass::Rigid;
    std::vector<Vec3> normals(obj.size(), Vec3::Zero());
    for_each_index(config.exec, obj.size(), [&](std::size_t i) {
      Vec3& x = obj.positions[i];
      if (!ctx.background->maybe_near(x)) return;
      if (inverse_mass(obj, i) == 0.0) return;
      const Vec3 n = push_out_of_background(x, *ctx.background, ctx.background_points, h);
      if (n.squaredNorm() == 0.0) return;
      if (!rigid) obj.velocities[i] = contact_velocity(obj.velocities[i], n, mu);
      normals[i] = n;
    });
    std::size_t count = 0;
    for (std::size_t i = 0; i < obj.size(); ++i) {
      if (normals[i].squaredNorm() == 0.0) continue;
      ++count;
      if (rigid) rigid_contacts[o].push_back({i, normals[i], Vec3::Zero(), mu});
    }
    if (count) touched[o] = 1;
    total += count;
  }
  return total;
}

Aabb bounds(const DynamicObject& obj) {
  Aabb box;
  for (const auto& p : obj.positions) box.extend(p);
  return box;
}

std::size_t object_contacts(SceneState& state, const SimConfig& config, std::vector<std::uint8_t>& touched) {
  const std::size_t n_obj = state.objects.size();
  if (n_obj < 2) return 0;
  const double h = config.particle_size;
  const double h2 = h * h;
  std::vector<Aabb> boxes(n_obj);
  for (std::size_t o = 0; o < n_obj; ++o) boxes[o] = bounds(state.objects[o]);

  std::vector<SpatialHash> hashes(n_obj);
  std::vector<std::uint8_t> hashed(n_obj, 0);
  std::size_t total = 0;
  for (std::size_t b = 1; b < n_obj; ++b) {
    for (std::size_t a = 0; a < b; ++a) {
      if (!boxes[a].overlaps(boxes[b], h)) continue;
      auto& oa = state.objects[a];
      auto& ob = state.objects[b];
      if (!hashed[b]) {
        hashes[b].build(ob.positions, h);
        hashed[b] = 1;
      }
      const double mu = 0.5 * (oa.material.friction_coefficient + ob.material.friction_coefficient);
      const Aabb reach{(boxes[b].lo.array() - h).matrix(), (boxes[b].hi.array() + h).matrix()};
      for (std::size_t i = 0; i < oa.size(); ++i) {
        if (!reach.contains(oa.positions[i])) continue;
        const double wi = inverse_mass(oa, i);
        hashes[b].for_each_candidate(oa.positions[i], h, [&](std::uint32_t j) {
          Vec3 d = oa.positions[i] - ob.positions[j];
          const double d2 = d.squaredNorm();
          if (d2 >= h2) return;
          const double wj = inverse_mass(ob, j);
          const double w = wi + wj;
          if (w == 0.0) return;
          const double len = std::sqrt(d2);
          const Vec3 n = len > 1e-12 ? Vec3(d / len) : Vec3::UnitZ();
          const double depth = h - len;
          oa.positions[i] += (wi / w * depth) * n;
          ob.positions[j] -= (wj / w * depth) * n;

          // Perfectly inelastic normal impulse plus capped friction impulse.
          const Vec3 v_rel = oa.velocities[i] - ob.velocities[j];
          const double vn = v_rel.dot(n);
          if (vn < 0.0) {
            const double jn = -vn / w;
            const Vec3 vt = v_rel - vn * n;
            const double vt_norm = vt.norm();
            Vec3 impulse = jn * n;
            if (vt_norm > 0.0) impulse -= std::min(mu * jn, vt_norm / w) * (vt / vt_norm);
            oa.velocities[i] += wi * impulse;
            ob.velocities[j] -= wj * impulse;
          }
          touched[a] = touched[b] = 1;
          ++total;
        });
      }
      // Positions of b moved; the index must follow.
      hashed[b] = 0;
      boxes[a] = bounds(oa);
      boxes[b] = bounds(ob);
    }
  }
  return total;
}

std::size_t gripper_contacts(SceneState& state, const SimConfig& config, const CollisionContext& ctx,
                             std::vector<std::uint8_t>& touched, RigidContacts& rigid_contacts) {
  if (!ctx.gripper) return 0;
  const double h = config.particle_size;
  const double step = 1.0 / config.substeps;
  const double f = std::clamp(ctx.gripper_fraction, 0.0, 1.0);
  const auto now = gripper_boxes(interpolate(ctx.gripper->from, ctx.gripper->to, f));
  const auto before = gripper_boxes(interpolate(ctx.gripper->from, ctx.gripper->to, std::max(0.0, f - step)));

  Aabb reach;
  std::array<Vec3, 3> box_velocity;
  for (std::size_t k = 0; k < now.size(); ++k) {
    const Vec3 r = now[k].axes.cwiseAbs() * now[k].half_extents + Vec3::Constant(h);
    reach.extend(now[k].center - r);
    reach.extend(now[k].center + r);
    box_velocity[k] = (now[k].center - before[k].center) / ctx.dt_sub;
  }

  std::size_t total = 0;
  for (std::size_t o = 0; o < state.objects.size(); ++o) {
    auto& obj = state.objects[o];
    if (!bounds(obj).overlaps(reach)) continue;
    for (std::size_t i = 0; i < obj.size(); ++i) {
      Vec3& x = obj.positions[i];
      if (!reach.contains(x) || inverse_mass(obj, i) == 0.0) continue;
      for (std::size_t k = 0; k < now.size(); ++k) {
        const auto& box = now[k];
        const Vec3 local = box.axes.transpose() * (x - box.center);
        const Vec3 extent = box.half_extents + Vec3::Constant(0.5 * h);
        const Vec3 gap = extent - local.cwiseAbs();
        if ((gap.array() <= 0.0).any()) continue;
        int axis;
        gap.minCoeff(&axis);
        const Vec3 n = box.axes.col(axis) * (local[axis] >= 0.0 ? 1.0 : -1.0);
        x += gap[axis] * n;
        if (obj.material.cls == MaterialClass::Rigid)
          rigid_contacts[o].push_back({i, n, box_velocity[k], config.gripper_friction});
        else
          obj.velocities[i] =
              box_velocity[k] + contact_velocity(obj.velocities[i] - box_velocity[k], n, config.gripper_friction);
        touched[o] = 1;
        ++total;
      }
    }
  }
  return total;
}

}  // namespace

std::size_t resolve_collisions(SceneState& state, const SimConfig& config, const CollisionContext& ctx,
                               StepReport* report) {
  std::vector<std::uint8_t> touched(state.objects.size(), 0);
  RigidContacts rigid_contacts(state.objects.size());
  const std::size_t with_objects = object_contacts(state, config, touched);
  const std::size_t with_gripper = gripper_contacts(state, config, ctx, touched, rigid_contacts);
  // Static geometry last so that no other correction leaves a particle inside it.
  const std::size_t with_background = background_contacts(state, config, ctx, touched, rigid_contacts);

  for (std::size_t o = 0; o < state.objects.size(); ++o) {
    if (!touched[o] || state.objects[o].material.cls != MaterialClass::Rigid) continue;
    rigidify(state.objects[o]);
    rigid_contact_impulses(state.objects[o], rigid_contacts[o]);
  }

  if (report) {
    report->background_contacts += with_background;
    report->object_contacts += with_objects;
  }
  return with_objects + with_gripper + with_background;
}

std::size_t resolve_collisions(SceneState& state, const SimConfig& config, double dt_sub) {
  SpatialHash hash(state.background.positions, config.particle_size);
  hash.build_proximity();
  CollisionContext ctx;
  ctx.background = &hash;
  ctx.background_points = state.background.positions;
  ctx.dt_sub = dt_sub;
  return resolve_collisions(state, config, ctx);
}

}  // namespace actionflow
