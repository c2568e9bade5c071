// Meshless shape matching restricted to rigid transforms.

#include "actionflow/error.hpp"
#include "actionflow/physics.hpp"

#include <Eigen/SVD>
#include <Eigen/LU>
#include <Eigen/QR>

#include <cmath>

namespace actionflow {

namespace {

RigidState& rigid_state(DynamicObject& obj) {
  auto* rigid = std::get_if<RigidState>(&obj.solver);
  if (!rigid || rigid->rest_positions.size() != obj.size())
    throw Error(ErrorCode::DegenerateObject, "rigid object without a rest shape");
  return *rigid;
}

Vec3 mass_center(std::span<const Vec3> positions, std::span<const double> masses) {
  Vec3 c = Vec3::Zero();
  double m = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    c += masses[i] * positions[i];
    m += masses[i];
  }
  return c / m;
}

// Rotation extraction by fixed-point iteration on the axis-angle residual,
// warm-started from the previous fit.
Quat extract_rotation(const Mat3& a, Quat q) {
  const double scale = a.norm();
  for (int it = 0; it < 200; ++it) {
    const Mat3 r = q.toRotationMatrix();
    const Vec3 num = r.col(0).cross(a.col(0)) + r.col(1).cross(a.col(1)) + r.col(2).cross(a.col(2));
    const double den = std::abs(r.col(0).dot(a.col(0)) + r.col(1).dot(a.col(1)) + r.col(2).dot(a.col(2)));
    const Vec3 omega = num / (den + 1e-12 * scale);
    const double w = omega.norm();
    if (w < 1e-15) break;
    q = Quat(Eigen::AngleAxisd(w, omega / w)) * q;
    q.normalize();
  }
  return q;
}

}  // namespace

Mat3 best_fit_rotation(const DynamicObject& obj, std::span<const Vec3> positions, Vec3* center) {
  const auto* rigid = std::get_if<RigidState>(&obj.solver);
  if (!rigid || rigid->rest_positions.size() != positions.size())
    throw Error(ErrorCode::DegenerateObject, "rigid object without a rest shape");
  const Vec3 c = mass_center(positions, obj.masses);
  Mat3 a = Mat3::Zero();
  for (std::size_t i = 0; i < positions.size(); ++i)
    a.noalias() += obj.masses[i] * (positions[i] - c) * (rigid->rest_positions[i] - rigid->rest_center).transpose();

  if (!a.allFinite()) throw Error(ErrorCode::NumericalBlowup, "non-finite shape-matching covariance");
  // Singular values of A resolve small ranks accurately; the eigenvalues of
  // AᵀA would square the condition number.
  const Vec3 sv = Eigen::JacobiSVD<Mat3>(a).singularValues();  // descending
  if (!(sv[0] > 0.0) || sv[1] <= 1e-9 * sv[0])
    throw Error(ErrorCode::DegenerateObject, "shape-matching covariance is singular (collinear shape)");
  if (center) *center = c;
  return extract_rotation(a, rigid->orientation).toRotationMatrix();
}

void rigid_substep(DynamicObject& obj, double dt_sub, std::span<const Vec3> accel) {
  auto& rigid = rigid_state(obj);
  const std::size_t n = obj.size();
  std::vector<Vec3> predicted(n);
  for (std::size_t i = 0; i < n; ++i) {
    obj.velocities[i] += dt_sub * accel[i];
    predicted[i] = obj.positions[i] + dt_sub * obj.velocities[i];
  }
  Vec3 c;
  const Mat3 r = best_fit_rotation(obj, predicted, &c);
  rigid.orientation = Quat(r).normalized();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 goal = r * (rigid.rest_positions[i] - rigid.rest_center) + c;
    obj.velocities[i] = (goal - obj.positions[i]) / dt_sub;
    obj.positions[i] = goal;
  }
}

void rigidify(DynamicObject& obj) {
  auto& rigid = rigid_state(obj);
  const std::size_t n = obj.size();
  Vec3 c;
  const Mat3 r = best_fit_rotation(obj, obj.positions, &c);
  rigid.orientation = Quat(r).normalized();

  Vec3 momentum = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();
  double mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    obj.positions[i] = r * (rigid.rest_positions[i] - rigid.rest_center) + c;
    const Vec3 arm = obj.positions[i] - c;
    const double m = obj.masses[i];
    mass += m;
    momentum += m * obj.velocities[i];
    angular += m * arm.cross(obj.velocities[i]);
    inertia += m * (arm.squaredNorm() * Mat3::Identity() - arm * arm.transpose());
  }
  const Vec3 v_center = momentum / mass;
  // Pseudo-inverse: nearly collinear shapes have an ill-conditioned inertia tensor.
  const Vec3 omega = inertia.completeOrthogonalDecomposition().solve(angular);
  for (std::size_t i = 0; i < n; ++i) obj.velocities[i] = v_center + omega.cross(obj.positions[i] - c);
}

void rigid_contact_impulses(DynamicObject& obj, std::span<const RigidContact> contacts, int iterations) {
  if (contacts.empty()) return;
  const std::size_t n = obj.size();
  const Vec3 c = mass_center(obj.positions, obj.masses);
  double mass = 0.0;
  Mat3 inertia = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 arm = obj.positions[i] - c;
    mass += obj.masses[i];
    inertia += obj.masses[i] * (arm.squaredNorm() * Mat3::Identity() - arm * arm.transpose());
  }
  // Pseudo-inverse so flat and collinear bodies still get a response.
  const Mat3 inv_inertia = inertia.completeOrthogonalDecomposition().pseudoInverse();

  // Body velocity from the particle momenta.
  Vec3 momentum = Vec3::Zero(), angular = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    momentum += obj.masses[i] * obj.velocities[i];
    angular += obj.masses[i] * (obj.positions[i] - c).cross(obj.velocities[i]);
  }
  Vec3 v = momentum / mass;
  Vec3 omega = inv_inertia * angular;

  // Effective mass of an impulse along `dir` applied at arm `r`.
  auto response = [&](const Vec3& r, const Vec3& dir) {
    const Vec3 rxd = r.cross(dir);
    return 1.0 / mass + rxd.dot(inv_inertia * rxd);
  };
  auto apply = [&](const Vec3& r, const Vec3& p) {
    v += p / mass;
    omega += inv_inertia * r.cross(p);
  };

  std::vector<double> jn(contacts.size(), 0.0);
  std::vector<Vec3> jt(contacts.size(), Vec3::Zero());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t k = 0; k < contacts.size(); ++k) {
      const auto& ct = contacts[k];
      const Vec3 r = obj.positions[ct.particle] - c;
      const Vec3& nrm = ct.normal;
      Vec3 rel = v + omega.cross(r) - ct.collider_velocity;
      // Normal: accumulated impulse stays non-negative.
      const double k_n = response(r, nrm);
      const double next = std::max(0.0, jn[k] - rel.dot(nrm) / k_n);
      apply(r, (next - jn[k]) * nrm);
      jn[k] = next;
      // Friction inside the cone of the current normal impulse.
      rel = v + omega.cross(r) - ct.collider_velocity;
      const Vec3 vt = rel - rel.dot(nrm) * nrm;
      const double vt_norm = vt.norm();
      if (vt_norm <= 0.0) continue;
      const Vec3 dir = vt / vt_norm;
      Vec3 target = jt[k] - (vt_norm / response(r, dir)) * dir;
      const double cap = ct.friction * jn[k];
      if (target.norm() > cap) target *= cap / target.norm();
      apply(r, target - jt[k]);
      jt[k] = target;
    }
  }
  for (std::size_t i = 0; i < n; ++i) obj.velocities[i] = v + omega.cross(obj.positions[i] - c);
}

}  // namespace actionflow
