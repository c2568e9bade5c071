#pragma once

// Binary wire protocol between the stream server and its clients.
//
// Every message is a 12-byte little-endian header
//   magic u32 = 0x52574E44 | version u16 | type u16 | payload_len u32
// followed by payload_len bytes. Message structs below hold the payload
// fields exactly as they travel (f32 / raw f16 bits), so decode followed by
// encode reproduces the input bytes.

#include "actionflow/scene.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace actionflow {

inline constexpr std::uint32_t kWireMagic = 0x52574E44;
inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MsgType : std::uint16_t {
  ActionPointForce = 0x0001,
  ActionForceField = 0x0002,
  ActionGripper = 0x0003,
  ActionCamera = 0x0004,
  FramePreview = 0x0010,
  FrameFlow = 0x0011,
  FrameDepth = 0x0012,
  FrameNoise = 0x0013,
  Control = 0x0020,
  Event = 0x0021,
  PixelPick = 0x0030,
  PickResult = 0x0031,
};

enum class ControlCmd : std::uint8_t { Reset = 0, Pause = 1, Resume = 2, Snapshot = 3, LoadSnapshot = 4, SetConfig = 5 };

enum class EventCode : std::uint8_t {
  Info = 0,
  Warning = 1,
  Frozen = 2,
  GeneratorError = 3,
  Ack = 4,
  Error = 5,
  Hello = 6,
};

struct PointForceMsg {
  std::array<float, 3> position{}, force{};
  float radius = 0, duration = 0;
};
struct ForceFieldMsg {
  std::array<float, 3> acceleration{};
  std::uint8_t has_region = 0;
  std::array<float, 6> box{};  // lo xyz, hi xyz
};
struct GripperMsg {
  std::array<float, 3> position{};
  std::array<float, 4> quat_wxyz{1, 0, 0, 0};
  float opening = 0;
};
struct CameraMsg {
  std::array<float, 9> rotation{};  // row-major
  std::array<float, 3> translation{};
};

//! Shared header of the per-frame image messages.
struct FrameHeader {
  std::uint32_t frame_index = 0;
  double sim_time = 0.0;
  std::uint16_t width = 0, height = 0;
};
struct PreviewMsg {
  FrameHeader header;
  std::vector<std::uint8_t> rgb;  // width*height*3
};
struct FlowMsg {
  FrameHeader header;
  std::vector<std::uint16_t> flow;  // width*height*2, f16 bits
};
struct DepthMsg {
  FrameHeader header;
  std::vector<std::uint16_t> depth;  // width*height, f16 bits
};
struct NoiseMsg {
  std::uint16_t h = 0, w = 0, c = 0;
  std::vector<std::uint16_t> values;  // h*w*c, f16 bits
};
struct ControlMsg {
  std::uint8_t cmd = 0;
};
struct EventMsg {
  std::uint8_t code = 0;
  std::string detail;  // UTF-8
};
struct PixelPickMsg {
  std::uint16_t u = 0, v = 0;
};
//! World point under the picked pixel; all NaN when the pixel is uncovered.
struct PickResultMsg {
  std::array<float, 3> point{};
};

using Message = std::variant<PointForceMsg, ForceFieldMsg, GripperMsg, CameraMsg, PreviewMsg, FlowMsg, DepthMsg,
                             NoiseMsg, ControlMsg, EventMsg, PixelPickMsg, PickResultMsg>;

MsgType message_type(const Message& m);

std::vector<std::uint8_t> encode_message(const Message& m);

enum class DecodeStatus { Ok, Incomplete, ProtocolError, UnknownMessage };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::Incomplete;
  std::optional<Message> message;  // set when status == Ok
  std::size_t consumed = 0;         // bytes to drop from the front of the stream
  std::string error;
};

/// Decodes the first message in `bytes`. Unknown types are reported with
/// `consumed` covering the whole message so that callers can skip it.
/// Never throws.
DecodeResult decode_message(std::span<const std::uint8_t> bytes);

std::uint16_t to_f16(float v);
float from_f16(std::uint16_t bits);

// Conversions between wire messages and domain values.
std::optional<Action> to_action(const Message& m);
Message to_message(const Action& a);
PreviewMsg preview_message(const ConditioningFrame& f);
FlowMsg flow_message(const ConditioningFrame& f);
DepthMsg depth_message(const ConditioningFrame& f);
NoiseMsg noise_message(const Latent& l);
EventMsg event_message(EventCode code, std::string detail);

}  // namespace actionflow
