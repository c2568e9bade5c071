#pragma once

#include "actionflow/scene.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace actionflow {

//! Franka-like hand span; finger separation is opening * kMaxGripperOpening.
inline constexpr double kMaxGripperOpening = 0.08;
inline constexpr double kGripperLinearSpeed = 0.5;   // m/s
inline constexpr double kGripperAngularSpeed = 2.0;  // rad/s
inline constexpr double kGripperFingerSpeed = 0.2;   // m/s of separation change

struct GripperPose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  double separation = kMaxGripperOpening;
};

//! Kinematic, infinite-mass two-finger proxy standing in for an IK-driven arm.
struct GripperProxy {
  GripperPose pose;
  GripperCommand target;
  bool active = false;
};

//! Oriented box collider in world space.
struct Obb {
  Vec3 center = Vec3::Zero();
  Mat3 axes = Mat3::Identity();  // columns are the box axes
  Vec3 half_extents = Vec3::Zero();
};

/// Pose a fraction t of the way from a to b (slerp for the orientation).
GripperPose interpolate(const GripperPose& a, const GripperPose& b, double t);

/// Palm plus two fingers, in that order. Local +z is the approach axis and the
/// fingers close along local y; `pose.position` sits between the fingertips.
std::array<Obb, 3> gripper_boxes(const GripperPose& pose);

//! Proxy pose at the start and end of one physics step.
struct GripperMotion {
  GripperPose from;
  GripperPose to;
};

struct ResolvedActions {
  std::vector<std::vector<Vec3>> accelerations;  // per object, per particle (m/s^2)
  std::optional<GripperCommand> gripper_target;
  std::optional<GripperMotion> gripper;
  std::optional<CameraPose> camera;
  std::vector<double> force_expiry;  // sim time at which each point force stops
  std::vector<std::string> warnings;
};

/// Falloff of a point force at distance r from its application point.
inline double force_falloff(double r, double radius) { return std::max(0.0, 1.0 - r / radius); }

/// Maps actions to per-particle accelerations for the step starting at
/// `sim_time`. Every PointForce in the list is treated as active; `frame_dt`
/// supplies the duration of forces that leave it unspecified. Gravity is not
/// included.
ResolvedActions resolve_actions(std::span<const Action> actions, const SceneState& state, double sim_time,
                                double frame_dt = 1e-2);

/// Moves the proxy toward its target with capped linear, angular and finger speeds.
GripperProxy step_gripper(const GripperProxy& proxy, const GripperCommand& target, double dt);

//! Point forces persisting across ticks until their duration elapses, plus the
//! most recent force field which stays on until replaced.
class ActionSchedule {
 public:
  struct TimedForce {
    PointForce force;
    double start = 0.0;
  };

  /// Registers newly arrived actions at `sim_time`; returns the non-persistent
  /// ones (gripper and camera commands) for immediate use.
  std::vector<Action> admit(std::span<const Action> actions, double sim_time, double frame_dt);
  /// Actions active for the step that starts at `sim_time`; expired forces are dropped.
  std::vector<Action> active(double sim_time);

  const std::vector<TimedForce>& forces() const { return forces_; }
  const std::optional<ForceField>& field() const { return field_; }
  void restore(std::vector<TimedForce> forces, std::optional<ForceField> field) {
    forces_ = std::move(forces);
    field_ = std::move(field);
  }
  void clear() {
    forces_.clear();
    field_.reset();
  }

 private:
  std::vector<TimedForce> forces_;
  std::optional<ForceField> field_;
};

}  // namespace actionflow
