#include "actionflow/actions.hpp"

#include "actionflow/error.hpp"

#include <algorithm>
#include <cmath>

namespace actionflow {

namespace {

// Tolerance when comparing accumulated simulation times.
constexpr double kTimeEps = 1e-9;

template <class... F>
struct Overloaded : F... {
  using F::operator()...;
};

}  // namespace

GripperPose interpolate(const GripperPose& a, const GripperPose& b, double t) {
  GripperPose out;
  out.position = a.position + t * (b.position - a.position);
  out.orientation = a.orientation.slerp(t, b.orientation).normalized();
  out.separation = a.separation + t * (b.separation - a.separation);
  return out;
}

std::array<Obb, 3> gripper_boxes(const GripperPose& pose) {
  const Mat3 r = pose.orientation.toRotationMatrix();
  auto place = [&](const Vec3& local_center, const Vec3& half) {
    return Obb{pose.position + r * local_center, r, half};
  };
  const double finger_y = 0.5 * pose.separation + 0.01;
  return {place({0.0, 0.0, -0.06}, {0.02, 0.065, 0.015}),
          place({0.0, finger_y, -0.025}, {0.01, 0.01, 0.025}),
          place({0.0, -finger_y, -0.025}, {0.01, 0.01, 0.025})};
}

ResolvedActions resolve_actions(std::span<const Action> actions, const SceneState& state, double sim_time,
                                double frame_dt) {
  ResolvedActions out;
  out.accelerations.resize(state.objects.size());
  for (std::size_t o = 0; o < state.objects.size(); ++o)
    out.accelerations[o].assign(state.objects[o].size(), Vec3::Zero());

  for (const auto& action : actions) {
    std::visit(Overloaded{
                   [&](const PointForce& f) {
                     const double duration = f.duration > 0.0 ? f.duration : frame_dt;
                     out.force_expiry.push_back(sim_time + duration);
                     std::size_t hits = 0;
                     for (std::size_t o = 0; o < state.objects.size(); ++o) {
                       const auto& obj = state.objects[o];
                       for (std::size_t i = 0; i < obj.size(); ++i) {
                         const double w = force_falloff((obj.positions[i] - f.position).norm(), f.radius);
                         if (w <= 0.0) continue;
                         out.accelerations[o][i] += f.force * (w / obj.masses[i]);
                         ++hits;
                       }
                     }
                     if (hits == 0) out.warnings.push_back("NoTarget: point force reaches no particle");
                   },
                   [&](const ForceField& f) {
                     for (std::size_t o = 0; o < state.objects.size(); ++o) {
                       const auto& obj = state.objects[o];
                       for (std::size_t i = 0; i < obj.size(); ++i)
                         if (!f.region || f.region->contains(obj.positions[i]))
                           out.accelerations[o][i] += f.acceleration;
                     }
                   },
                   [&](const GripperCommand& g) { out.gripper_target = g; },
                   [&](const CameraPose& c) { out.camera = c; },
               },
               action);
  }
  return out;
}

GripperProxy step_gripper(const GripperProxy& proxy, const GripperCommand& target, double dt) {
  GripperProxy next = proxy;
  next.target = target;
  next.active = true;
  auto& pose = next.pose;

  const Vec3 delta = target.ee_position - pose.position;
  const double dist = delta.norm();
  const double max_step = kGripperLinearSpeed * dt;
  pose.position = dist <= max_step ? target.ee_position : Vec3(pose.position + delta * (max_step / dist));

  const Quat goal = target.ee_orientation.normalized();
  const double angle = pose.orientation.angularDistance(goal);
  const double max_turn = kGripperAngularSpeed * dt;
  pose.orientation = angle <= max_turn ? goal : pose.orientation.slerp(max_turn / angle, goal).normalized();

  const double sep_goal = std::clamp(target.gripper_opening, 0.0, 1.0) * kMaxGripperOpening;
  const double max_slide = kGripperFingerSpeed * dt;
  pose.separation += std::clamp(sep_goal - pose.separation, -max_slide, max_slide);
  return next;
}

std::vector<Action> ActionSchedule::admit(std::span<const Action> actions, double sim_time, double frame_dt) {
  std::vector<Action> immediate;
  for (const auto& action : actions) {
    if (const auto* f = std::get_if<PointForce>(&action)) {
      TimedForce timed{*f, sim_time};
      if (timed.force.duration <= 0.0) timed.force.duration = frame_dt;
      forces_.push_back(timed);
    } else if (const auto* field = std::get_if<ForceField>(&action)) {
      if (field->acceleration.isZero(0.0))
        field_.reset();
      else
        field_ = *field;
    } else {
      immediate.push_back(action);
    }
  }
  return immediate;
}

std::vector<Action> ActionSchedule::active(double sim_time) {
  std::erase_if(forces_, [&](const TimedForce& t) {
    return sim_time + kTimeEps >= t.start + t.force.duration;
  });
  std::vector<Action> out;
  out.reserve(forces_.size() + 1);
  for (const auto& t : forces_) out.emplace_back(t.force);
  if (field_) out.emplace_back(*field_);
  return out;
}

}  // namespace actionflow
