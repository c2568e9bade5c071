#pragma once

// Hand-built objects for solver tests. Topology here is written out
// explicitly so the solvers are not tested against their own builders.

#include "actionflow/physics.hpp"

#include <random>

namespace testing_support {

using namespace actionflow;

inline DynamicObject free_particles(std::vector<Vec3> positions, double mass = 1.0,
                                    MaterialClass cls = MaterialClass::Elastic) {
  DynamicObject obj;
  obj.material = MaterialParams::defaults(cls);
  obj.positions = std::move(positions);
  obj.velocities.assign(obj.size(), Vec3::Zero());
  obj.colors.assign(obj.size(), Vec3f::Constant(0.5f));
  obj.masses.assign(obj.size(), mass);
  PbdState pbd;
  pbd.built = true;
  obj.solver = pbd;
  return obj;
}

inline DynamicObject rigid_body(std::vector<Vec3> positions, double particle_mass = 0.01) {
  DynamicObject obj;
  obj.material = MaterialParams::defaults(MaterialClass::Rigid);
  obj.positions = positions;
  obj.velocities.assign(obj.size(), Vec3::Zero());
  obj.colors.assign(obj.size(), Vec3f::Constant(0.5f));
  obj.masses.assign(obj.size(), particle_mass);
  RigidState rigid;
  rigid.rest_positions = positions;
  Vec3 c = Vec3::Zero();
  for (const auto& p : positions) c += p;
  rigid.rest_center = c / static_cast<double>(positions.size());
  obj.solver = rigid;
  return obj;
}

inline std::vector<Vec3> box_lattice(const Vec3& lo, const std::array<int, 3>& n, double spacing) {
  std::vector<Vec3> out;
  for (int i = 0; i < n[0]; ++i)
    for (int j = 0; j < n[1]; ++j)
      for (int k = 0; k < n[2]; ++k) out.push_back(lo + spacing * Vec3(i, j, k));
  return out;
}

inline DynamicObject mpm_block(MaterialClass cls, const Vec3& lo, const std::array<int, 3>& n, double spacing) {
  DynamicObject obj;
  obj.material = MaterialParams::defaults(cls);
  obj.positions = box_lattice(lo, n, spacing);
  obj.velocities.assign(obj.size(), Vec3::Zero());
  obj.colors.assign(obj.size(), Vec3f::Constant(0.5f));
  const double volume = spacing * spacing * spacing;
  obj.masses.assign(obj.size(), obj.material.density * volume);
  MpmState mpm;
  mpm.deformation.assign(obj.size(), Mat3::Identity());
  mpm.affine.assign(obj.size(), Mat3::Zero());
  mpm.volume.assign(obj.size(), volume);
  obj.solver = mpm;
  return obj;
}

/// Flat background sheet at height z spanning [x0,x1]x[y0,y1].
inline PointCloud ground(double x0, double x1, double y0, double y1, double z, double spacing) {
  PointCloud pc;
  for (double x = x0; x <= x1 + 1e-12; x += spacing)
    for (double y = y0; y <= y1 + 1e-12; y += spacing) {
      pc.positions.emplace_back(x, y, z);
      pc.colors.emplace_back(0.3f, 0.3f, 0.3f);
    }
  return pc;
}

inline SceneState scene_with(std::vector<DynamicObject> objects, PointCloud background = {}) {
  SceneState s;
  s.objects = std::move(objects);
  s.background = std::move(background);
  return s;
}

}  // namespace testing_support
