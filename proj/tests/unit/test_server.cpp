#include "actionflow/server.hpp"

#include "bundles.hpp"
#include "sessions.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <doctest.h>

#include <fstream>
#include <thread>

using namespace testing_support;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

//! Server on an ephemeral port, running on its own thread for the test's lifetime.
struct LiveServer {
  TempDir dir{"server"};
  std::unique_ptr<StreamServer> server;
  std::thread thread;
  unsigned short port = 0;

  LiveServer() {
    std::filesystem::create_directories(dir.path / "static" / "js");
    std::ofstream(dir.path / "static" / "index.html") << "<!doctype html><title>cockpit</title>";
    std::ofstream(dir.path / "static" / "js" / "app.js") << "console.log(1);";
    std::ofstream(dir.path / "secret.txt") << "outside";
    ServerOptions opt;
    opt.port = 0;
    opt.static_dir = dir.path / "static";
    opt.config_path = dir.path / "config.json";
    auto session = std::make_unique<Session>(weightless(synthetic_scene(small_spec())), SessionConfig{});
    server = std::make_unique<StreamServer>(std::move(session), opt);
    port = server->listen();
    thread = std::thread([this] { server->run(); });
  }
  ~LiveServer() {
    server->stop();
    thread.join();
  }
};

http::response<http::string_body> http_get(unsigned short port, const std::string& target) {
  asio::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  http::request<http::string_body> req(http::verb::get, target, 11);
  req.set(http::field::host, "localhost");
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  return res;
}

struct WsPeer {
  asio::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};

  explicit WsPeer(unsigned short port) {
    ws.next_layer().connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
    ws.handshake("localhost", "/stream");
    ws.binary(true);
  }

  void send(const std::vector<std::uint8_t>& bytes) { ws.write(asio::buffer(bytes)); }
  void send(const Message& m) { send(encode_message(m)); }

  Message next() {
    beast::flat_buffer buf;
    ws.read(buf);
    const auto data = buf.cdata();
    const auto* p = static_cast<const std::uint8_t*>(data.data());
    const auto r = decode_message(std::span(p, data.size()));
    REQUIRE(r.status == DecodeStatus::Ok);
    REQUIRE(r.consumed == data.size());
    return *r.message;
  }

  /// Skips stream traffic until a message of type T arrives.
  template <class T>
  T next_of() {
    for (int i = 0; i < 2000; ++i) {
      auto m = next();
      if (auto* t = std::get_if<T>(&m)) return *t;
    }
    FAIL("expected message never arrived");
    return {};
  }

  /// Next Ack or Error event, skipping frames and telemetry.
  EventMsg reply() {
    for (;;) {
      const auto e = next_of<EventMsg>();
      if (e.code == static_cast<std::uint8_t>(EventCode::Ack) || e.code == static_cast<std::uint8_t>(EventCode::Error))
        return e;
    }
  }
};

std::uint8_t code(EventCode c) { return static_cast<std::uint8_t>(c); }

}  // namespace

TEST_CASE("server streams frames and answers control messages") {
  LiveServer live;
  WsPeer peer(live.port);

  const auto hello = peer.next_of<EventMsg>();
  CHECK(hello.code == code(EventCode::Hello));
  CHECK(hello.detail.find("v1") != std::string::npos);

  const auto preview = peer.next_of<PreviewMsg>();
  CHECK(preview.header.width == 96);
  CHECK(preview.header.height == 64);
  CHECK(preview.rgb.size() == 96u * 64u * 3u);
  const auto flow = peer.next_of<FlowMsg>();
  CHECK(flow.header.frame_index == preview.header.frame_index);
  CHECK(flow.header.sim_time == preview.header.sim_time);
  const auto depth = peer.next_of<DepthMsg>();
  const auto noise = peer.next_of<NoiseMsg>();
  CHECK(noise.h == 8);
  CHECK(noise.w == 12);
  CHECK(noise.c == 16);

  SUBCASE("pixel pick") {
    // Pick the first pixel the depth frame says is covered.
    std::uint16_t u = 0, v = 0;
    bool found = false;
    for (std::size_t i = 0; i < depth.depth.size() && !found; ++i)
      if (std::isfinite(from_f16(depth.depth[i]))) {
        u = static_cast<std::uint16_t>(i % 96), v = static_cast<std::uint16_t>(i / 96);
        found = true;
      }
    REQUIRE(found);
    peer.send(PixelPickMsg{u, v});
    const auto hit = peer.next_of<PickResultMsg>();
    CHECK(std::isfinite(hit.point[0]));
    CHECK(std::isfinite(hit.point[2]));
    peer.send(PixelPickMsg{5000, 5000});
    const auto miss = peer.next_of<PickResultMsg>();
    CHECK(std::isnan(miss.point[0]));
  }

  SUBCASE("pause, snapshot, load and resume") {
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::LoadSnapshot)});
    CHECK(peer.reply().code == code(EventCode::Error));  // nothing stored yet
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::Pause)});
    CHECK(peer.reply().detail == "pause");
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::Snapshot)});
    CHECK(peer.reply().code == code(EventCode::Ack));
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::LoadSnapshot)});
    CHECK(peer.reply().detail == "load_snapshot");
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::Reset)});
    CHECK(peer.reply().detail == "reset");
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::Resume)});
    CHECK(peer.reply().detail == "resume");
    const auto after = peer.next_of<PreviewMsg>();
    CHECK(after.header.frame_index > preview.header.frame_index);
  }

  SUBCASE("set_config reloads the config file") {
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::SetConfig)});
    CHECK(peer.reply().code == code(EventCode::Error));  // file missing
    std::ofstream(live.dir.path / "config.json") << R"({"alpha": 0.75, "target_fps": 60})";
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::SetConfig)});
    CHECK(peer.reply().detail == "set_config");
    std::ofstream(live.dir.path / "config.json") << R"({"noise_channels": 4})";
    peer.send(ControlMsg{static_cast<std::uint8_t>(ControlCmd::SetConfig)});
    CHECK(peer.reply().code == code(EventCode::Error));
  }

  SUBCASE("actions, batching and unknown types") {
    auto batch = encode_message(to_message(ForceField{Vec3(1, 0, 0), std::nullopt}));
    std::vector<std::uint8_t> unknown = {0x44, 0x4E, 0x57, 0x52, 1, 0, 0x99, 0x09, 2, 0, 0, 0, 7, 7};
    batch.insert(batch.end(), unknown.begin(), unknown.end());
    const auto pause = encode_message(ControlMsg{static_cast<std::uint8_t>(ControlCmd::Pause)});
    batch.insert(batch.end(), pause.begin(), pause.end());
    peer.send(batch);
    CHECK(peer.reply().detail == "pause");

    peer.send(PointForceMsg{{0, 0, 0}, {1, 0, 0}, -1.0f, 0.0f});  // negative radius
    CHECK(peer.reply().code == code(EventCode::Error));
    peer.send(preview);  // frames only travel server to client
    CHECK(peer.reply().code == code(EventCode::Error));
  }

  SUBCASE("protocol errors close the connection") {
    peer.send(std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    CHECK(peer.reply().code == code(EventCode::Error));
    beast::flat_buffer buf;
    beast::error_code ec;
    for (int i = 0; i < 100 && !ec; ++i) peer.ws.read(buf, ec);
    CHECK(ec == websocket::error::closed);
  }
}

TEST_CASE("server keeps streaming to other clients when one drops") {
  LiveServer live;
  {
    WsPeer gone(live.port);
    gone.next_of<PreviewMsg>();
  }
  WsPeer peer(live.port);
  const auto a = peer.next_of<PreviewMsg>();
  const auto b = peer.next_of<PreviewMsg>();
  CHECK(b.header.frame_index > a.header.frame_index);
}

TEST_CASE("server serves static assets") {
  LiveServer live;
  auto res = http_get(live.port, "/");
  CHECK(res.result() == http::status::ok);
  CHECK(res.body().find("cockpit") != std::string::npos);
  CHECK(res[http::field::content_type].starts_with("text/html"));
  res = http_get(live.port, "/js/app.js?v=2");
  CHECK(res.result() == http::status::ok);
  CHECK(res[http::field::content_type] == "text/javascript");
  CHECK(http_get(live.port, "/missing.css").result() == http::status::not_found);
  CHECK(http_get(live.port, "/../secret.txt").result() == http::status::not_found);
  CHECK(http_get(live.port, "/js/../../secret.txt").result() == http::status::not_found);
}
