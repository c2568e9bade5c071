#pragma once

#include "actionflow/actions.hpp"
#include "actionflow/noise.hpp"
#include "actionflow/physics.hpp"
#include "actionflow/protocol.hpp"
#include "actionflow/render.hpp"

#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

namespace actionflow {

struct SessionConfig {
  SimConfig sim;
  SplatConfig splat;
  NoiseConfig noise;
  double alpha = 0.5;  // weight of the encoded preview in the latent mixture
  double target_fps = 30.0;
  std::uint64_t seed = 0;
  /// Inline generation and no wall-clock pacing; frames are a pure function of the inputs.
  bool deterministic = true;
  std::string prompt;
  std::size_t history_length = 8;  // generated frames kept for the generator

  void validate() const;
};

struct TickTimings {
  double physics_ms = 0, render_ms = 0, noise_ms = 0, generate_ms = 0, total_ms = 0;
};

//! Everything produced by one tick.
struct FrameOutput {
  ConditioningFrame conditioning;  // warped_noise is set
  Latent mixed;                    // alpha * E(preview) + sqrt(1 - alpha^2) * z_flow
  std::vector<std::uint8_t> generated;  // empty when generation runs on the worker
  bool generator_fallback = false;
  TickTimings timings;
  StepReport physics;
};

enum class SessionStatus : std::uint8_t { Running, Paused, Frozen };

struct SessionEvent {
  EventCode code;
  std::string detail;
};

//! One interactive simulation: the producer side of the stream. Actions may be
//! submitted from any thread; everything else is called from the driving thread.
class Session {
 public:
  using GeneratedSink = std::function<void(std::uint32_t frame_index, const GeneratedFrame&)>;

  Session(SceneState initial, SessionConfig config, std::shared_ptr<Generator> plugin = nullptr);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Queues an action; it takes effect on the next tick.
  void submit(const Action& action);
  /// Runs one tick. Returns nothing while paused or frozen.
  std::optional<FrameOutput> tick();

  void reset();
  void pause();
  void resume();
  SessionStatus status() const { return status_; }

  std::vector<std::uint8_t> snapshot() const;
  void load_snapshot(std::span<const std::uint8_t> bytes);
  void set_config(const SessionConfig& config);

  /// World point under pixel (u, v) of the last frame, if covered.
  std::optional<Vec3> pick(int u, int v) const;

  std::vector<SessionEvent> drain_events();
  /// Receives generated frames when generation runs asynchronously.
  void set_generated_sink(GeneratedSink sink);

  const SceneState& scene() const { return scene_; }
  const SessionConfig& config() const { return config_; }
  const NoiseState& noise() const { return noise_; }
  const GripperProxy& gripper() const { return gripper_; }
  std::uint32_t frame_counter() const { return frame_counter_; }

 private:
  class Worker;

  void emit(EventCode code, std::string detail);
  void reseed_noise();

  SceneState initial_;
  SessionConfig config_;
  SceneState scene_;
  std::unique_ptr<PhysicsEngine> engine_;
  NoiseState noise_;
  GripperProxy gripper_;
  ActionSchedule schedule_;
  std::uint32_t frame_counter_ = 0;
  SessionStatus status_ = SessionStatus::Running;
  std::deque<std::vector<std::uint8_t>> history_;

  std::shared_ptr<Generator> plugin_;
  std::unique_ptr<Worker> worker_;

  mutable std::mutex inbox_mutex_;
  std::vector<Action> inbox_;

  std::mutex events_mutex_;
  std::vector<SessionEvent> events_;

  std::vector<float> last_depth_;
  Camera last_camera_;
};

}  // namespace actionflow
