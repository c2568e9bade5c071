#include "actionflow/scene.hpp"

#include "actionflow/error.hpp"
#include "actionflow/exec.hpp"

#include <algorithm>
#include <cmath>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace actionflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::MalformedBundle: return "MalformedBundle";
    case ErrorCode::InvalidDepth: return "InvalidDepth";
    case ErrorCode::DegenerateObject: return "DegenerateObject";
    case ErrorCode::NumericalBlowup: return "NumericalBlowup";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::InvalidAlpha: return "InvalidAlpha";
    case ErrorCode::GeneratorError: return "GeneratorError";
    case ErrorCode::IncompatibleSnapshot: return "IncompatibleSnapshot";
    case ErrorCode::ProtocolError: return "ProtocolError";
  }
  return "Unknown";
}

int parallel_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

}  // namespace

void Camera::validate() const {
  require(fx > 0 && fy > 0, "focal lengths must be positive");
  require(width > 0 && height > 0, "image size must be positive");
  require(cx > 0 && cx < width && cy > 0 && cy < height, "principal point outside the image");
  require(rotation.allFinite() && translation.allFinite(), "non-finite extrinsics");
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  require(err <= 1e-6, "rotation is not orthonormal");
}

std::string_view to_string(MaterialClass c) {
  switch (c) {
    case MaterialClass::Rigid: return "rigid";
    case MaterialClass::Elastic: return "elastic";
    case MaterialClass::Cloth: return "cloth";
    case MaterialClass::Smoke: return "smoke";
    case MaterialClass::Liquid: return "liquid";
    case MaterialClass::Granular: return "granular";
  }
  return "rigid";
}

MaterialClass material_class_from_string(std::string_view s) {
  for (auto c : {MaterialClass::Rigid, MaterialClass::Elastic, MaterialClass::Cloth, MaterialClass::Smoke,
                 MaterialClass::Liquid, MaterialClass::Granular}) {
    if (to_string(c) == s) return c;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown material class '" + std::string(s) + "'");
}

MaterialParams MaterialParams::defaults(MaterialClass cls) {
  MaterialParams m;
  m.cls = cls;
  switch (cls) {
    case MaterialClass::Rigid:
      m.density = 1000.0;
      m.friction_coefficient = 0.1;
      break;
    case MaterialClass::Elastic:
      m.density = 1000.0;
      m.stretch_compliance = 0.0;
      m.bending_compliance = 0.0;
      m.volume_compliance = 0.0;
      m.stretch_relaxation = 0.3;
      m.bending_relaxation = 0.3;
      m.volume_relaxation = 0.1;
      break;
    case MaterialClass::Cloth:
      m.density = 200.0;
      m.stretch_compliance = 1e-7;
      m.bending_compliance = 1e-5;
      m.stretch_relaxation = 1.0;
      m.bending_relaxation = 1.0;
      break;
    case MaterialClass::Smoke:
      m.density = 1.0;
      m.viscosity = 0.1;
      break;
    case MaterialClass::Liquid:
      m.density = 1000.0;
      m.youngs_modulus = 1e7;
      m.poissons_ratio = 0.2;
      break;
    case MaterialClass::Granular:
      m.density = 1500.0;
      m.youngs_modulus = 1e6;
      m.poissons_ratio = 0.2;
      m.friction_angle = 45.0;
      // Contact friction matching the internal friction angle (tan 45°).
      m.friction_coefficient = 1.0;
      break;
  }
  return m;
}

void MaterialParams::validate() const {
  require(density > 0 && std::isfinite(density), "density must be positive");
  require(mass >= 0, "mass must be non-negative");
  require(friction_coefficient >= 0, "friction coefficient must be non-negative");
  require(youngs_modulus > 0, "Young's modulus must be positive");
  require(poissons_ratio >= 0 && poissons_ratio < 0.5, "Poisson's ratio must lie in [0, 0.5)");
  require(friction_angle >= 0 && friction_angle < 90, "friction angle must lie in [0, 90)");
  require(stretch_compliance >= 0 && bending_compliance >= 0 && volume_compliance >= 0,
          "compliances must be non-negative");
  require(stretch_relaxation > 0 && bending_relaxation > 0 && volume_relaxation > 0,
          "relaxation factors must be positive");
  require(viscosity >= 0, "viscosity must be non-negative");
}

void validate(const Action& action) {
  std::visit(
      [](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, PointForce>) {
          require(all_finite(a.position) && all_finite(a.force), "point force must be finite");
          require(a.radius > 0, "point force radius must be positive");
          require(std::isfinite(a.duration) && a.duration >= 0, "point force duration must be non-negative");
        } else if constexpr (std::is_same_v<T, ForceField>) {
          require(all_finite(a.acceleration), "force field must be finite");
        } else if constexpr (std::is_same_v<T, GripperCommand>) {
          require(all_finite(a.ee_position), "gripper position must be finite");
          require(std::abs(a.ee_orientation.norm() - 1.0) <= 1e-6, "gripper orientation must be a unit quaternion");
          require(a.gripper_opening >= 0 && a.gripper_opening <= 1, "gripper opening must lie in [0, 1]");
        } else {
          require(a.rotation.allFinite() && a.translation.allFinite(), "camera pose must be finite");
          const double err = (a.rotation.transpose() * a.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
          require(err <= 1e-6, "camera rotation is not orthonormal");
        }
      },
      action);
}

void DynamicObject::validate() const {
  const auto n = positions.size();
  require(velocities.size() == n && colors.size() == n && masses.size() == n, "object arrays differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    require(all_finite(positions[i]) && all_finite(velocities[i]), "object state is not finite");
    require(masses[i] > 0, "particle mass must be positive");
  }
  material.validate();
  if (const auto* rigid = std::get_if<RigidState>(&solver)) {
    require(rigid->rest_positions.size() == n, "rigid rest shape size mismatch");
  } else if (const auto* mpm = std::get_if<MpmState>(&solver)) {
    require(mpm->deformation.size() == n && mpm->affine.size() == n && mpm->volume.size() == n &&
                (mpm->stress.empty() || mpm->stress.size() == n),
            "MPM state size mismatch");
  }
}

std::size_t SceneState::dynamic_count() const {
  std::size_t n = 0;
  for (const auto& o : objects) n += o.size();
  return n;
}

}  // namespace actionflow
