#include "actionflow/session.hpp"

#include "actionflow/error.hpp"
#include "actionflow/serialize.hpp"

#include <chrono>
#include <cmath>

namespace actionflow {

namespace {

constexpr std::uint32_t kSnapshotMagic = 0x4E534641;  // "AFSN"
constexpr std::uint32_t kSnapshotVersion = 1;

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void put_quat(ByteWriter& w, const Quat& q) {
  w.put(q.w()), w.put(q.x()), w.put(q.y()), w.put(q.z());
}
Quat get_quat(ByteReader& r) {
  const double qw = r.get<double>(), qx = r.get<double>(), qy = r.get<double>(), qz = r.get<double>();
  return {qw, qx, qy, qz};
}

void put_optional_box(ByteWriter& w, const std::optional<Aabb>& box) {
  w.put<std::uint8_t>(box.has_value());
  if (box) w.put_vec3(box->lo), w.put_vec3(box->hi);
}
std::optional<Aabb> get_optional_box(ByteReader& r) {
  if (!r.get<std::uint8_t>()) return std::nullopt;
  Aabb b;
  b.lo = r.get_vec3();
  b.hi = r.get_vec3();
  return b;
}

void put_action(ByteWriter& w, const Action& a) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(a.index()));
  if (const auto* f = std::get_if<PointForce>(&a)) {
    w.put_vec3(f->position), w.put_vec3(f->force), w.put(f->radius), w.put(f->duration);
  } else if (const auto* f = std::get_if<ForceField>(&a)) {
    w.put_vec3(f->acceleration);
    put_optional_box(w, f->region);
  } else if (const auto* g = std::get_if<GripperCommand>(&a)) {
    w.put_vec3(g->ee_position), put_quat(w, g->ee_orientation), w.put(g->gripper_opening);
  } else if (const auto* c = std::get_if<CameraPose>(&a)) {
    w.put_mat3(c->rotation), w.put_vec3(c->translation);
  }
}
Action get_action(ByteReader& r) {
  switch (r.get<std::uint8_t>()) {
    case 0: {
      PointForce f;
      f.position = r.get_vec3();
      f.force = r.get_vec3();
      f.radius = r.get<double>();
      f.duration = r.get<double>();
      return f;
    }
    case 1: {
      ForceField f;
      f.acceleration = r.get_vec3();
      f.region = get_optional_box(r);
      return f;
    }
    case 2: {
      GripperCommand g;
      g.ee_position = r.get_vec3();
      g.ee_orientation = get_quat(r);
      g.gripper_opening = r.get<double>();
      return g;
    }
    case 3: {
      CameraPose c;
      c.rotation = r.get_mat3();
      c.translation = r.get_vec3();
      return c;
    }
    default:
      throw Error(ErrorCode::IncompatibleSnapshot, "unknown action tag in snapshot");
  }
}

void put_config(ByteWriter& w, const SessionConfig& c) {
  const auto& s = c.sim;
  w.put(s.dt), w.put(s.substeps), w.put(s.particle_size), w.put(s.mpm_grid_density), w.put(s.pbd_iterations);
  w.put(s.seed), w.put<std::uint8_t>(s.exec == Exec::Parallel), w.put(s.mpm_cfl), w.put<std::uint64_t>(s.mpm_max_cells);
  w.put<std::uint8_t>(s.mpm_open_boundary), w.put(s.gripper_friction), w.put(s.smoke_buoyancy);
  w.put(c.splat.splat_radius);
  w.put(c.noise.downsample), w.put(c.noise.channels), w.put(c.noise.refill_threshold);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.noise.mode));
  w.put(c.alpha), w.put(c.target_fps), w.put(c.seed), w.put<std::uint8_t>(c.deterministic);
  w.put_string(c.prompt);
  w.put<std::uint64_t>(c.history_length);
}
SessionConfig get_config(ByteReader& r) {
  SessionConfig c;
  auto& s = c.sim;
  s.dt = r.get<double>();
  s.substeps = r.get<int>();
  s.particle_size = r.get<double>();
  s.mpm_grid_density = r.get<double>();
  s.pbd_iterations = r.get<int>();
  s.seed = r.get<std::uint64_t>();
  s.exec = r.get<std::uint8_t>() ? Exec::Parallel : Exec::Serial;
  s.mpm_cfl = r.get<double>();
  s.mpm_max_cells = r.get<std::uint64_t>();
  s.mpm_open_boundary = r.get<std::uint8_t>() != 0;
  s.gripper_friction = r.get<double>();
  s.smoke_buoyancy = r.get<double>();
  c.splat.splat_radius = r.get<double>();
  c.noise.downsample = r.get<int>();
  c.noise.channels = r.get<int>();
  c.noise.refill_threshold = r.get<double>();
  c.noise.mode = static_cast<WarpMode>(r.get<std::uint8_t>());
  c.alpha = r.get<double>();
  c.target_fps = r.get<double>();
  c.seed = r.get<std::uint64_t>();
  c.deterministic = r.get<std::uint8_t>() != 0;
  c.prompt = r.get_string();
  c.history_length = r.get<std::uint64_t>();
  return c;
}

void put_bytes_block(ByteWriter& w, const std::vector<std::uint8_t>& b) {
  w.put<std::uint64_t>(b.size());
  w.put_bytes(b);
}
std::vector<std::uint8_t> get_bytes_block(ByteReader& r) {
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining()) throw Error(ErrorCode::IncompatibleSnapshot, "truncated snapshot");
  const auto raw = r.get_bytes(n);
  return {raw.begin(), raw.end()};
}

}  // namespace

void SessionConfig::validate() const {
  sim.validate();
  splat.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidAlpha, "alpha must lie in [0, 1]");
  if (!(target_fps > 0.0)) throw Error(ErrorCode::InvalidArgument, "target fps must be positive");
  if (noise.downsample < 1 || noise.channels < 1) throw Error(ErrorCode::InvalidArgument, "bad latent shape");
}

//! Background generation: always works on the most recent conditioning
//! frame, dropping older ones it did not get to.
class Session::Worker {
 public:
  Worker(std::shared_ptr<Generator> plugin, std::string prompt, std::size_t history)
      : plugin_(std::move(plugin)), prompt_(std::move(prompt)), history_length_(history), thread_([this] { run(); }) {}
  ~Worker() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }
  void post(ConditioningFrame frame) {
    {
      std::lock_guard lock(mutex_);
      pending_ = std::move(frame);
    }
    cv_.notify_all();
  }
  void set_sink(GeneratedSink sink) {
    std::lock_guard lock(mutex_);
    sink_ = std::move(sink);
  }

 private:
  void run() {
    std::deque<std::vector<std::uint8_t>> history;
    for (;;) {
      ConditioningFrame frame;
      GeneratedSink sink;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || pending_.has_value(); });
        if (stop_) return;
        frame = std::move(*pending_);
        pending_.reset();
        sink = sink_;
      }
      const std::vector<std::vector<std::uint8_t>> past(history.begin(), history.end());
      auto out = generate_with_fallback(plugin_.get(), frame, prompt_, past);
      history.push_back(out.rgb);
      while (history.size() > history_length_) history.pop_front();
      if (sink) sink(frame.frame_index, out);
    }
  }

  std::shared_ptr<Generator> plugin_;
  std::string prompt_;
  std::size_t history_length_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<ConditioningFrame> pending_;
  GeneratedSink sink_;
  bool stop_ = false;
  std::thread thread_;
};

Session::Session(SceneState initial, SessionConfig config, std::shared_ptr<Generator> plugin)
    : initial_(std::move(initial)), config_(std::move(config)), plugin_(std::move(plugin)) {
  config_.validate();
  initial_.camera.validate();
  scene_ = initial_;
  engine_ = std::make_unique<PhysicsEngine>(initial_, config_.sim);
  reseed_noise();
  last_camera_ = scene_.camera;
  if (!config_.deterministic) worker_ = std::make_unique<Worker>(plugin_, config_.prompt, config_.history_length);
}

Session::~Session() = default;

void Session::reseed_noise() {
  noise_ = NoiseState::create(initial_.camera.width, initial_.camera.height, config_.seed, config_.noise);
}

void Session::submit(const Action& action) {
  validate(action);
  std::lock_guard lock(inbox_mutex_);
  inbox_.push_back(action);
}

void Session::emit(EventCode code, std::string detail) {
  std::lock_guard lock(events_mutex_);
  events_.push_back({code, std::move(detail)});
}

std::vector<SessionEvent> Session::drain_events() {
  std::lock_guard lock(events_mutex_);
  return std::exchange(events_, {});
}

void Session::set_generated_sink(GeneratedSink sink) {
  if (worker_) worker_->set_sink(std::move(sink));
}

std::optional<FrameOutput> Session::tick() {
  if (status_ != SessionStatus::Running) return std::nullopt;
  const auto t_start = Clock::now();
  const double dt = config_.sim.dt;

  std::vector<Action> arrived;
  {
    std::lock_guard lock(inbox_mutex_);
    arrived.swap(inbox_);
  }
  const auto immediate = schedule_.admit(arrived, scene_.sim_time, dt);
  std::optional<CameraPose> camera;
  for (const auto& a : immediate) {
    if (const auto* g = std::get_if<GripperCommand>(&a)) {
      if (!gripper_.active) {
        // First command: the proxy appears at the commanded pose.
        gripper_.pose.position = g->ee_position;
        gripper_.pose.orientation = g->ee_orientation.normalized();
        gripper_.pose.separation = std::clamp(g->gripper_opening, 0.0, 1.0) * kMaxGripperOpening;
        gripper_.active = true;
      }
      gripper_.target = *g;
    } else if (const auto* c = std::get_if<CameraPose>(&a)) {
      camera = *c;
    }
  }

  FrameOutput out;
  const auto t_phys = Clock::now();
  const auto active = schedule_.active(scene_.sim_time);
  auto resolved = resolve_actions(active, scene_, scene_.sim_time, dt);
  for (auto& w : resolved.warnings) emit(EventCode::Warning, std::move(w));
  if (gripper_.active) {
    const GripperPose from = gripper_.pose;
    gripper_ = step_gripper(gripper_, gripper_.target, dt);
    resolved.gripper = GripperMotion{from, gripper_.pose};
  }
  try {
    engine_->step_in_place(scene_, resolved);
  } catch (const NumericalBlowup& e) {
    status_ = SessionStatus::Frozen;
    emit(EventCode::Frozen, e.what());
    return std::nullopt;
  }
  out.physics = engine_->last_report();
  out.timings.physics_ms = ms_since(t_phys);

  const auto t_render = Clock::now();
  const Camera previous = scene_.camera;
  if (camera) {
    scene_.camera.rotation = camera->rotation;
    scene_.camera.translation = camera->translation;
  }
  RenderBuffers buffers = render_frame(scene_, previous, scene_.camera, dt, config_.splat, config_.sim.exec);
  if (!(previous == scene_.camera)) {
    // Flow follows the camera move; the preview is seen from the new camera.
    auto moved = render_preview(scene_, scene_.camera, config_.splat, config_.sim.exec);
    moved.flow = std::move(buffers.flow);
    buffers = std::move(moved);
  }
  out.timings.render_ms = ms_since(t_render);

  ++frame_counter_;
  out.conditioning = to_conditioning_frame(std::move(buffers), frame_counter_, scene_.sim_time);
  auto& cond = out.conditioning;

  const auto t_noise = Clock::now();
  const Latent& z = warp_noise(noise_, cond.flow, cond.width, cond.height);
  cond.warped_noise = z;
  const Latent encoded = encode_preview(cond.preview, cond.width, cond.height, config_.noise.downsample,
                                        config_.noise.channels);
  out.mixed = sdedit_mix(encoded, z, config_.alpha);
  out.timings.noise_ms = ms_since(t_noise);

  last_depth_ = cond.depth;
  last_camera_ = scene_.camera;

  const auto t_gen = Clock::now();
  if (worker_) {
    worker_->post(cond);
  } else {
    const std::vector<std::vector<std::uint8_t>> past(history_.begin(), history_.end());
    auto generated = generate_with_fallback(plugin_.get(), cond, config_.prompt, past);
    if (generated.fallback) emit(EventCode::GeneratorError, generated.error);
    out.generator_fallback = generated.fallback;
    out.generated = std::move(generated.rgb);
    history_.push_back(out.generated);
    while (history_.size() > config_.history_length) history_.pop_front();
  }
  out.timings.generate_ms = ms_since(t_gen);
  out.timings.total_ms = ms_since(t_start);
  return out;
}

void Session::reset() {
  scene_ = initial_;
  reseed_noise();
  gripper_ = {};
  schedule_.clear();
  history_.clear();
  {
    std::lock_guard lock(inbox_mutex_);
    inbox_.clear();
  }
  last_depth_.clear();
  last_camera_ = scene_.camera;
  status_ = SessionStatus::Running;
}

void Session::pause() {
  if (status_ == SessionStatus::Running) status_ = SessionStatus::Paused;
}

void Session::resume() {
  if (status_ == SessionStatus::Paused) status_ = SessionStatus::Running;
}

void Session::set_config(const SessionConfig& config) {
  config.validate();
  if (config.noise.downsample != config_.noise.downsample || config.noise.channels != config_.noise.channels)
    throw Error(ErrorCode::InvalidArgument, "latent shape cannot change within a session");
  const bool rebuild = !(config.sim == config_.sim);
  config_ = config;
  noise_.config = config.noise;
  if (rebuild) engine_ = std::make_unique<PhysicsEngine>(initial_, config_.sim);
}

std::vector<std::uint8_t> Session::snapshot() const {
  ByteWriter w;
  w.put(kSnapshotMagic);
  w.put(kSnapshotVersion);
  put_config(w, config_);
  write_scene(w, scene_);

  w.put(noise_.carrier.h), w.put(noise_.carrier.w), w.put(noise_.carrier.c);
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(noise_.carrier.data.data()), noise_.carrier.data.size() * 4});
  w.put_string(noise_.rng_state());
  w.put(noise_.seed), w.put(noise_.frame_index);

  w.put<std::uint8_t>(gripper_.active);
  w.put_vec3(gripper_.pose.position), put_quat(w, gripper_.pose.orientation), w.put(gripper_.pose.separation);
  put_action(w, gripper_.target);

  w.put<std::uint64_t>(schedule_.forces().size());
  for (const auto& f : schedule_.forces()) put_action(w, f.force), w.put(f.start);
  w.put<std::uint8_t>(schedule_.field().has_value());
  if (schedule_.field()) put_action(w, *schedule_.field());

  w.put(frame_counter_);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(status_));
  {
    std::lock_guard lock(inbox_mutex_);
    w.put<std::uint64_t>(inbox_.size());
    for (const auto& a : inbox_) put_action(w, a);
  }
  w.put<std::uint64_t>(history_.size());
  for (const auto& h : history_) put_bytes_block(w, h);
  put_bytes_block(w, std::vector<std::uint8_t>(reinterpret_cast<const std::uint8_t*>(last_depth_.data()),
                                               reinterpret_cast<const std::uint8_t*>(last_depth_.data()) +
                                                   last_depth_.size() * 4));
  write_camera(w, last_camera_);
  return std::move(w.bytes());
}

void Session::load_snapshot(std::span<const std::uint8_t> bytes) {
  try {
    ByteReader r(bytes);
    if (r.get<std::uint32_t>() != kSnapshotMagic) throw Error(ErrorCode::IncompatibleSnapshot, "not a session snapshot");
    const auto version = r.get<std::uint32_t>();
    if (version != kSnapshotVersion)
      throw Error(ErrorCode::IncompatibleSnapshot, "snapshot version " + std::to_string(version) + " unsupported");
    SessionConfig config = get_config(r);
    SceneState scene = read_scene(r);
    if (scene.background.positions != initial_.background.positions || scene.objects.size() != initial_.objects.size())
      throw Error(ErrorCode::IncompatibleSnapshot, "snapshot belongs to a different scene");

    NoiseState noise;
    noise.config = config.noise;
    const int h = r.get<int>(), w = r.get<int>(), c = r.get<int>();
    if (h != noise_.carrier.h || w != noise_.carrier.w || c != noise_.carrier.c)
      throw Error(ErrorCode::IncompatibleSnapshot, "noise carrier shape differs");
    noise.carrier = Latent(h, w, c);
    const auto raw = r.get_bytes(noise.carrier.data.size() * 4);
    std::memcpy(noise.carrier.data.data(), raw.data(), raw.size());
    noise.restore_rng(r.get_string());
    noise.seed = r.get<std::uint64_t>();
    noise.frame_index = r.get<std::uint32_t>();

    GripperProxy gripper;
    gripper.active = r.get<std::uint8_t>() != 0;
    gripper.pose.position = r.get_vec3();
    gripper.pose.orientation = get_quat(r);
    gripper.pose.separation = r.get<double>();
    gripper.target = std::get<GripperCommand>(get_action(r));

    std::vector<ActionSchedule::TimedForce> forces(r.get<std::uint64_t>());
    for (auto& f : forces) {
      f.force = std::get<PointForce>(get_action(r));
      f.start = r.get<double>();
    }
    std::optional<ForceField> field;
    if (r.get<std::uint8_t>()) field = std::get<ForceField>(get_action(r));

    const auto frame_counter = r.get<std::uint32_t>();
    const auto status = static_cast<SessionStatus>(r.get<std::uint8_t>());
    std::vector<Action> inbox(r.get<std::uint64_t>());
    for (auto& a : inbox) a = get_action(r);
    std::deque<std::vector<std::uint8_t>> history(r.get<std::uint64_t>());
    for (auto& h_ : history) h_ = get_bytes_block(r);
    const auto depth_bytes = get_bytes_block(r);
    std::vector<float> depth(depth_bytes.size() / 4);
    std::memcpy(depth.data(), depth_bytes.data(), depth.size() * 4);
    const Camera last_camera = read_camera(r);
    if (r.remaining() != 0) throw Error(ErrorCode::IncompatibleSnapshot, "trailing bytes in snapshot");

    set_config(config);
    scene_ = std::move(scene);
    noise_ = std::move(noise);
    gripper_ = gripper;
    schedule_.restore(std::move(forces), std::move(field));
    frame_counter_ = frame_counter;
    status_ = status;
    {
      std::lock_guard lock(inbox_mutex_);
      inbox_ = std::move(inbox);
    }
    history_ = std::move(history);
    last_depth_ = std::move(depth);
    last_camera_ = last_camera;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IncompatibleSnapshot) throw;
    throw Error(ErrorCode::IncompatibleSnapshot, e.what());
  } catch (const std::bad_variant_access&) {
    throw Error(ErrorCode::IncompatibleSnapshot, "snapshot action has the wrong kind");
  }
}

std::optional<Vec3> Session::pick(int u, int v) const {
  const int w = last_camera_.width, h = last_camera_.height;
  if (u < 0 || v < 0 || u >= w || v >= h || last_depth_.empty()) return std::nullopt;
  const float d = last_depth_[static_cast<std::size_t>(v) * w + u];
  if (!std::isfinite(d)) return std::nullopt;
  const Vec3 q((u - last_camera_.cx) * d / last_camera_.fx, (v - last_camera_.cy) * d / last_camera_.fy, d);
  return last_camera_.to_world(q);
}

}  // namespace actionflow
