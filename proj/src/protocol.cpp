#include "actionflow/protocol.hpp"

#include "actionflow/error.hpp"
#include "actionflow/serialize.hpp"

#include <Eigen/Core>

#include <bit>
#include <cmath>
#include <limits>

namespace actionflow {

namespace {

constexpr std::size_t kFrameHeaderSize = 16;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

template <std::size_t N>
void put_floats(ByteWriter& w, const std::array<float, N>& a) {
  for (float f : a) w.put(f);
}
template <std::size_t N>
std::array<float, N> get_floats(ByteReader& r) {
  std::array<float, N> a;
  for (auto& f : a) f = r.get<float>();
  return a;
}

void put_header(ByteWriter& w, const FrameHeader& h) {
  w.put(h.frame_index);
  w.put(h.sim_time);
  w.put(h.width);
  w.put(h.height);
}
FrameHeader get_header(ByteReader& r) {
  FrameHeader h;
  h.frame_index = r.get<std::uint32_t>();
  h.sim_time = r.get<double>();
  h.width = r.get<std::uint16_t>();
  h.height = r.get<std::uint16_t>();
  return h;
}

void put_u16s(ByteWriter& w, const std::vector<std::uint16_t>& v) {
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * 2});
}
std::vector<std::uint16_t> get_u16s(ByteReader& r, std::size_t n) {
  const auto raw = r.get_bytes(n * 2);
  std::vector<std::uint16_t> v(n);
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2, cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3, cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4, cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

[[noreturn]] void protocol_error(const std::string& what) { throw Error(ErrorCode::ProtocolError, what); }

void expect_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    protocol_error(std::string(what) + " payload is " + std::to_string(got) + " bytes, expected " +
                   std::to_string(want));
}

Message decode_payload(MsgType type, ByteReader& r, std::size_t len) {
  switch (type) {
    case MsgType::ActionPointForce: {
      expect_size(len, 32, "point force");
      PointForceMsg m;
      m.position = get_floats<3>(r);
      m.force = get_floats<3>(r);
      m.radius = r.get<float>();
      m.duration = r.get<float>();
      return m;
    }
    case MsgType::ActionForceField: {
      expect_size(len, 37, "force field");
      ForceFieldMsg m;
      m.acceleration = get_floats<3>(r);
      m.has_region = r.get<std::uint8_t>();
      if (m.has_region > 1) protocol_error("has_region must be 0 or 1");
      m.box = get_floats<6>(r);
      return m;
    }
    case MsgType::ActionGripper: {
      expect_size(len, 32, "gripper");
      GripperMsg m;
      m.position = get_floats<3>(r);
      m.quat_wxyz = get_floats<4>(r);
      m.opening = r.get<float>();
      return m;
    }
    case MsgType::ActionCamera: {
      expect_size(len, 48, "camera");
      CameraMsg m;
      m.rotation = get_floats<9>(r);
      m.translation = get_floats<3>(r);
      return m;
    }
    case MsgType::FramePreview: {
      if (len < kFrameHeaderSize) protocol_error("preview payload shorter than its header");
      PreviewMsg m;
      m.header = get_header(r);
      const std::size_t n = std::size_t{m.header.width} * m.header.height * 3;
      expect_size(len, kFrameHeaderSize + n, "preview");
      const auto raw = r.get_bytes(n);
      m.rgb.assign(raw.begin(), raw.end());
      return m;
    }
    case MsgType::FrameFlow: {
      if (len < kFrameHeaderSize) protocol_error("flow payload shorter than its header");
      FlowMsg m;
      m.header = get_header(r);
      const std::size_t n = std::size_t{m.header.width} * m.header.height * 2;
      expect_size(len, kFrameHeaderSize + 2 * n, "flow");
      m.flow = get_u16s(r, n);
      return m;
    }
    case MsgType::FrameDepth: {
      if (len < kFrameHeaderSize) protocol_error("depth payload shorter than its header");
      DepthMsg m;
      m.header = get_header(r);
      const std::size_t n = std::size_t{m.header.width} * m.header.height;
      expect_size(len, kFrameHeaderSize + 2 * n, "depth");
      m.depth = get_u16s(r, n);
      return m;
    }
    case MsgType::FrameNoise: {
      if (len < 6) protocol_error("noise payload shorter than its header");
      NoiseMsg m;
      m.h = r.get<std::uint16_t>();
      m.w = r.get<std::uint16_t>();
      m.c = r.get<std::uint16_t>();
      const std::size_t n = std::size_t{m.h} * m.w * m.c;
      expect_size(len, 6 + 2 * n, "noise");
      m.values = get_u16s(r, n);
      return m;
    }
    case MsgType::Control: {
      expect_size(len, 1, "control");
      ControlMsg m{r.get<std::uint8_t>()};
      if (m.cmd > static_cast<std::uint8_t>(ControlCmd::SetConfig)) protocol_error("unknown control command");
      return m;
    }
    case MsgType::Event: {
      if (len < 1) protocol_error("event payload is empty");
      EventMsg m;
      m.code = r.get<std::uint8_t>();
      const auto raw = r.get_bytes(len - 1);
      m.detail.assign(raw.begin(), raw.end());
      if (!valid_utf8(m.detail)) protocol_error("event detail is not UTF-8");
      return m;
    }
    case MsgType::PixelPick: {
      expect_size(len, 4, "pixel pick");
      PixelPickMsg m;
      m.u = r.get<std::uint16_t>();
      m.v = r.get<std::uint16_t>();
      return m;
    }
    case MsgType::PickResult: {
      expect_size(len, 12, "pick result");
      return PickResultMsg{get_floats<3>(r)};
    }
  }
  protocol_error("unreachable message type");
}

bool known_type(std::uint16_t t) {
  switch (static_cast<MsgType>(t)) {
    case MsgType::ActionPointForce:
    case MsgType::ActionForceField:
    case MsgType::ActionGripper:
    case MsgType::ActionCamera:
    case MsgType::FramePreview:
    case MsgType::FrameFlow:
    case MsgType::FrameDepth:
    case MsgType::FrameNoise:
    case MsgType::Control:
    case MsgType::Event:
    case MsgType::PixelPick:
    case MsgType::PickResult:
      return true;
  }
  return false;
}

template <std::size_t N>
std::array<float, N> floats_of(const auto& src) {
  std::array<float, N> a;
  for (std::size_t i = 0; i < N; ++i) a[i] = static_cast<float>(src[i]);
  return a;
}

FrameHeader header_of(const ConditioningFrame& f) {
  if (f.width > 0xFFFF || f.height > 0xFFFF) throw Error(ErrorCode::ShapeError, "frame too large for the wire format");
  return {f.frame_index, f.sim_time, static_cast<std::uint16_t>(f.width), static_cast<std::uint16_t>(f.height)};
}

}  // namespace

std::uint16_t to_f16(float v) { return std::bit_cast<std::uint16_t>(Eigen::half(v)); }
float from_f16(std::uint16_t bits) { return static_cast<float>(std::bit_cast<Eigen::half>(bits)); }

MsgType message_type(const Message& m) {
  return std::visit(Overloaded{
                        [](const PointForceMsg&) { return MsgType::ActionPointForce; },
                        [](const ForceFieldMsg&) { return MsgType::ActionForceField; },
                        [](const GripperMsg&) { return MsgType::ActionGripper; },
                        [](const CameraMsg&) { return MsgType::ActionCamera; },
                        [](const PreviewMsg&) { return MsgType::FramePreview; },
                        [](const FlowMsg&) { return MsgType::FrameFlow; },
                        [](const DepthMsg&) { return MsgType::FrameDepth; },
                        [](const NoiseMsg&) { return MsgType::FrameNoise; },
                        [](const ControlMsg&) { return MsgType::Control; },
                        [](const EventMsg&) { return MsgType::Event; },
                        [](const PixelPickMsg&) { return MsgType::PixelPick; },
                        [](const PickResultMsg&) { return MsgType::PickResult; },
                    },
                    m);
}

std::vector<std::uint8_t> encode_message(const Message& m) {
  ByteWriter w;
  w.put(kWireMagic);
  w.put(kWireVersion);
  w.put(static_cast<std::uint16_t>(message_type(m)));
  w.put(std::uint32_t{0});  // patched below
  std::visit(Overloaded{
                 [&](const PointForceMsg& p) {
                   put_floats(w, p.position);
                   put_floats(w, p.force);
                   w.put(p.radius);
                   w.put(p.duration);
                 },
                 [&](const ForceFieldMsg& p) {
                   put_floats(w, p.acceleration);
                   w.put(p.has_region);
                   put_floats(w, p.box);
                 },
                 [&](const GripperMsg& p) {
                   put_floats(w, p.position);
                   put_floats(w, p.quat_wxyz);
                   w.put(p.opening);
                 },
                 [&](const CameraMsg& p) {
                   put_floats(w, p.rotation);
                   put_floats(w, p.translation);
                 },
                 [&](const PreviewMsg& p) {
                   if (p.rgb.size() != std::size_t{p.header.width} * p.header.height * 3)
                     throw Error(ErrorCode::ShapeError, "preview size disagrees with its header");
                   put_header(w, p.header);
                   w.put_bytes(p.rgb);
                 },
                 [&](const FlowMsg& p) {
                   if (p.flow.size() != std::size_t{p.header.width} * p.header.height * 2)
                     throw Error(ErrorCode::ShapeError, "flow size disagrees with its header");
                   put_header(w, p.header);
                   put_u16s(w, p.flow);
                 },
                 [&](const DepthMsg& p) {
                   if (p.depth.size() != std::size_t{p.header.width} * p.header.height)
                     throw Error(ErrorCode::ShapeError, "depth size disagrees with its header");
                   put_header(w, p.header);
                   put_u16s(w, p.depth);
                 },
                 [&](const NoiseMsg& p) {
                   if (p.values.size() != std::size_t{p.h} * p.w * p.c)
                     throw Error(ErrorCode::ShapeError, "noise size disagrees with its header");
                   w.put(p.h);
                   w.put(p.w);
                   w.put(p.c);
                   put_u16s(w, p.values);
                 },
                 [&](const ControlMsg& p) { w.put(p.cmd); },
                 [&](const EventMsg& p) {
                   w.put(p.code);
                   w.put_bytes({reinterpret_cast<const std::uint8_t*>(p.detail.data()), p.detail.size()});
                 },
                 [&](const PixelPickMsg& p) {
                   w.put(p.u);
                   w.put(p.v);
                 },
                 [&](const PickResultMsg& p) { put_floats(w, p.point); },
             },
             m);
  auto& bytes = w.bytes();
  const auto len = static_cast<std::uint32_t>(bytes.size() - kHeaderSize);
  std::memcpy(bytes.data() + 8, &len, 4);
  return std::move(bytes);
}

DecodeResult decode_message(std::span<const std::uint8_t> bytes) {
  DecodeResult out;
  if (bytes.size() >= 4) {
    std::uint32_t magic;
    std::memcpy(&magic, bytes.data(), 4);
    if (magic != kWireMagic) {
      out.status = DecodeStatus::ProtocolError;
      out.error = "bad magic";
      return out;
    }
  }
  if (bytes.size() < kHeaderSize) return out;  // Incomplete
  std::uint16_t version, type;
  std::uint32_t len;
  std::memcpy(&version, bytes.data() + 4, 2);
  std::memcpy(&type, bytes.data() + 6, 2);
  std::memcpy(&len, bytes.data() + 8, 4);
  if (version != kWireVersion) {
    out.status = DecodeStatus::ProtocolError;
    out.error = "unsupported protocol version " + std::to_string(version);
    return out;
  }
  if (len > kMaxPayload) {
    out.status = DecodeStatus::ProtocolError;
    out.error = "payload length " + std::to_string(len) + " exceeds the limit";
    return out;
  }
  if (bytes.size() < kHeaderSize + len) return out;  // Incomplete
  out.consumed = kHeaderSize + len;
  if (!known_type(type)) {
    out.status = DecodeStatus::UnknownMessage;
    out.error = "unknown message type " + std::to_string(type);
    return out;
  }
  try {
    ByteReader r(bytes.subspan(kHeaderSize, len));
    out.message = decode_payload(static_cast<MsgType>(type), r, len);
    out.status = DecodeStatus::Ok;
  } catch (const Error& e) {
    out.status = DecodeStatus::ProtocolError;
    out.error = e.what();
    out.message.reset();
  }
  return out;
}

std::optional<Action> to_action(const Message& m) {
  auto v3 = [](const std::array<float, 3>& a) { return Vec3(a[0], a[1], a[2]); };
  if (const auto* p = std::get_if<PointForceMsg>(&m)) return PointForce{v3(p->position), v3(p->force), p->radius, p->duration};
  if (const auto* p = std::get_if<ForceFieldMsg>(&m)) {
    ForceField f{v3(p->acceleration), std::nullopt};
    if (p->has_region) f.region = Aabb{Vec3(p->box[0], p->box[1], p->box[2]), Vec3(p->box[3], p->box[4], p->box[5])};
    return f;
  }
  if (const auto* p = std::get_if<GripperMsg>(&m)) {
    const auto& q = p->quat_wxyz;
    return GripperCommand{v3(p->position), Quat(q[0], q[1], q[2], q[3]), p->opening};
  }
  if (const auto* p = std::get_if<CameraMsg>(&m)) {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = p->rotation[i];
    return CameraPose{r, v3(p->translation)};
  }
  return std::nullopt;
}

Message to_message(const Action& a) {
  return std::visit(Overloaded{
                        [](const PointForce& f) -> Message {
                          return PointForceMsg{floats_of<3>(f.position), floats_of<3>(f.force),
                                               static_cast<float>(f.radius), static_cast<float>(f.duration)};
                        },
                        [](const ForceField& f) -> Message {
                          ForceFieldMsg m{floats_of<3>(f.acceleration), 0, {}};
                          if (f.region) {
                            m.has_region = 1;
                            for (int i = 0; i < 3; ++i) {
                              m.box[i] = static_cast<float>(f.region->lo[i]);
                              m.box[3 + i] = static_cast<float>(f.region->hi[i]);
                            }
                          }
                          return m;
                        },
                        [](const GripperCommand& g) -> Message {
                          const auto& q = g.ee_orientation;
                          return GripperMsg{floats_of<3>(g.ee_position),
                                            {static_cast<float>(q.w()), static_cast<float>(q.x()),
                                             static_cast<float>(q.y()), static_cast<float>(q.z())},
                                            static_cast<float>(g.gripper_opening)};
                        },
                        [](const CameraPose& c) -> Message {
                          CameraMsg m;
                          for (int i = 0; i < 9; ++i) m.rotation[i] = static_cast<float>(c.rotation(i / 3, i % 3));
                          m.translation = floats_of<3>(c.translation);
                          return m;
                        },
                    },
                    a);
}

PreviewMsg preview_message(const ConditioningFrame& f) { return {header_of(f), f.preview}; }

FlowMsg flow_message(const ConditioningFrame& f) {
  FlowMsg m{header_of(f), {}};
  m.flow.reserve(f.flow.size());
  for (float v : f.flow) m.flow.push_back(to_f16(v));
  return m;
}

DepthMsg depth_message(const ConditioningFrame& f) {
  DepthMsg m{header_of(f), {}};
  m.depth.reserve(f.depth.size());
  for (float v : f.depth) m.depth.push_back(to_f16(v));
  return m;
}

NoiseMsg noise_message(const Latent& l) {
  NoiseMsg m{static_cast<std::uint16_t>(l.h), static_cast<std::uint16_t>(l.w), static_cast<std::uint16_t>(l.c), {}};
  m.values.reserve(l.data.size());
  for (float v : l.data) m.values.push_back(to_f16(v));
  return m;
}

EventMsg event_message(EventCode code, std::string detail) { return {static_cast<std::uint8_t>(code), std::move(detail)}; }

}  // namespace actionflow
