#include "actionflow/server.hpp"

#include "actionflow/error.hpp"
#include "actionflow/scenario.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

namespace actionflow {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using Bytes = std::vector<std::uint8_t>;
using Clock = std::chrono::steady_clock;

namespace {

const char* mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".wasm") return "application/wasm";
  if (ext == ".ico") return "image/x-icon";
  return "application/octet-stream";
}

// Maps a request target onto a file below `root`, refusing anything that
// climbs out of it.
std::optional<std::filesystem::path> resolve_static(const std::filesystem::path& root, std::string_view target) {
  if (root.empty()) return std::nullopt;
  target = target.substr(0, target.find_first_of("?#"));
  if (target.empty() || target.front() != '/') return std::nullopt;
  std::filesystem::path rel(std::string(target.substr(1)));
  if (rel.empty() || std::string(target).back() == '/') rel /= "index.html";
  for (const auto& part : rel)
    if (part == ".." || part == ".") return std::nullopt;
  auto full = root / rel;
  std::error_code ec;
  if (!std::filesystem::is_regular_file(full, ec)) return std::nullopt;
  return full;
}

}  // namespace

class WsClient;

struct StreamServer::Impl {
  Impl(std::unique_ptr<Session> s, ServerOptions o)
      : session(std::move(s)), options(std::move(o)), acceptor(ioc), timer(ioc) {}

  void do_accept();
  void schedule_tick();
  void tick_once();
  void handle(WsClient& from, const Message& m);
  void handle_control(WsClient& from, ControlCmd cmd);
  void broadcast(const Bytes& bytes, bool droppable);
  void flush_events();
  void drop(WsClient* c);

  asio::io_context ioc{1};
  std::unique_ptr<Session> session;
  ServerOptions options;
  tcp::acceptor acceptor;
  asio::steady_timer timer;
  std::vector<std::shared_ptr<WsClient>> clients;
  std::optional<Bytes> snapshot_slot;
  Clock::time_point deadline;
  std::atomic<std::uint64_t> ticks{0};
  std::uint64_t overruns = 0;
  double lag_ms = 0.0;
  bool listening = false;
};

//! One websocket peer. Reads are reassembled into protocol messages; writes
//! go through a queue so that at most one async_write is in flight.
class WsClient : public std::enable_shared_from_this<WsClient> {
 public:
  WsClient(tcp::socket socket, StreamServer::Impl& server) : ws_(std::move(socket)), server_(server) {}

  void start(http::request<http::string_body> req) {
    ws_.binary(true);
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(kHeaderSize + kMaxPayload);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->server_.drop(self.get());
      self->send(encode_message(event_message(EventCode::Hello, "actionflow wire v" + std::to_string(kWireVersion))));
      self->do_read();
    });
  }

  void send(Bytes bytes, bool droppable = false) {
    if (closing_) return;
    if (droppable && queued_frames_ >= server_.options.max_queued_frames) return;  // slow reader: skip frames
    queue_.push_back({std::make_shared<Bytes>(std::move(bytes)), droppable});
    if (droppable) ++queued_frames_;
    if (!writing_) do_write();
  }

  /// Sends what is queued, then closes.
  void close_after_flush() {
    closing_ = true;
    if (!writing_) do_close();
  }

 private:
  struct Outgoing {
    std::shared_ptr<Bytes> bytes;
    bool droppable;
  };

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) return server_.drop(this);
    const auto data = buffer_.cdata();
    const auto* p = static_cast<const std::uint8_t*>(data.data());
    pending_.insert(pending_.end(), p, p + data.size());
    buffer_.consume(buffer_.size());

    std::size_t offset = 0;
    while (offset < pending_.size()) {
      const auto r = decode_message(std::span(pending_).subspan(offset));
      if (r.status == DecodeStatus::Incomplete) break;
      if (r.status == DecodeStatus::ProtocolError) {
        send(encode_message(event_message(EventCode::Error, "protocol error: " + r.error)));
        close_after_flush();
        return;
      }
      if (r.status == DecodeStatus::Ok) server_.handle(*this, *r.message);
      offset += r.consumed;
      if (closing_) return;
    }
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<long>(offset));
    do_read();
  }

  void do_write() {
    writing_ = true;
    ws_.async_write(asio::buffer(*queue_.front().bytes),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec); });
  }

  void on_write(beast::error_code ec) {
    writing_ = false;
    if (ec) return server_.drop(this);
    if (queue_.front().droppable) --queued_frames_;
    queue_.pop_front();
    if (!queue_.empty()) return do_write();
    if (closing_) do_close();
  }

  void do_close() {
    ws_.async_close(websocket::close_code::normal,
                    [self = shared_from_this()](beast::error_code) { self->server_.drop(self.get()); });
  }

  websocket::stream<beast::tcp_stream> ws_;
  StreamServer::Impl& server_;
  beast::flat_buffer buffer_;
  Bytes pending_;
  std::deque<Outgoing> queue_;
  std::size_t queued_frames_ = 0;
  bool writing_ = false;
  bool closing_ = false;
};

namespace {

//! Plain HTTP connection: upgrades to websocket or serves one static file.
class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, StreamServer::Impl& server) : stream_(std::move(socket)), server_(server) {}

  void start() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

 private:
  void on_read(beast::error_code ec) {
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      auto client = std::make_shared<WsClient>(stream_.release_socket(), server_);
      server_.clients.push_back(client);
      client->start(std::move(req_));
      return;
    }
    respond();
  }

  template <class Body>
  void write(std::shared_ptr<http::response<Body>> res) {
    res->keep_alive(false);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  void respond() {
    auto text = [&](http::status status, std::string body) {
      auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
      res->set(http::field::content_type, "text/plain; charset=utf-8");
      res->body() = std::move(body);
      write(res);
    };
    if (req_.method() != http::verb::get && req_.method() != http::verb::head)
      return text(http::status::method_not_allowed, "only GET is supported\n");
    const auto path = resolve_static(server_.options.static_dir, {req_.target().data(), req_.target().size()});
    if (!path) return text(http::status::not_found, "not found\n");

    beast::error_code ec;
    http::file_body::value_type file;
    file.open(path->c_str(), beast::file_mode::scan, ec);
    if (ec) return text(http::status::internal_server_error, "cannot open file\n");
    auto res = std::make_shared<http::response<http::file_body>>(http::status::ok, req_.version());
    res->set(http::field::content_type, mime_type(*path));
    if (req_.method() == http::verb::head) {
      res->content_length(file.size());
    } else {
      res->body() = std::move(file);
    }
    write(res);
  }

  beast::tcp_stream stream_;
  StreamServer::Impl& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

void StreamServer::Impl::do_accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpSession>(std::move(socket), *this)->start();
    do_accept();
  });
}

void StreamServer::Impl::drop(WsClient* c) {
  std::erase_if(clients, [c](const auto& p) { return p.get() == c; });
}

void StreamServer::Impl::broadcast(const Bytes& bytes, bool droppable) {
  // Copy: a failed send can drop the client from the list mid-iteration.
  const auto targets = clients;
  for (const auto& c : targets) c->send(bytes, droppable);
}

void StreamServer::Impl::flush_events() {
  for (auto& e : session->drain_events()) broadcast(encode_message(event_message(e.code, std::move(e.detail))), false);
}

void StreamServer::Impl::schedule_tick() {
  timer.expires_at(deadline);
  timer.async_wait([this](beast::error_code ec) {
    if (!ec) tick_once();
  });
}

void StreamServer::Impl::tick_once() {
  auto frame = session->tick();
  flush_events();
  if (frame) {
    const auto& c = frame->conditioning;
    broadcast(encode_message(preview_message(c)), true);
    broadcast(encode_message(flow_message(c)), true);
    if (options.send_depth) broadcast(encode_message(depth_message(c)), true);
    if (options.send_noise && c.warped_noise) broadcast(encode_message(noise_message(*c.warped_noise)), true);
  }
  ++ticks;

  // A late tick starts the next one immediately; simulation frames are never
  // skipped, the lag is reported instead.
  const auto period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(1.0 / session->config().target_fps));
  deadline += period;
  const auto now = Clock::now();
  if (deadline < now) {
    lag_ms = std::chrono::duration<double, std::milli>(now - deadline).count();
    ++overruns;
    deadline = now;
  } else {
    lag_ms = 0.0;
  }
  const auto every = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::lround(session->config().target_fps)));
  if (ticks % every == 0 && !clients.empty()) {
    std::ostringstream os;
    os << "telemetry frame=" << session->frame_counter() << " sim_time=" << session->scene().sim_time
       << " overruns=" << overruns << " lag_ms=" << lag_ms;
    broadcast(encode_message(event_message(EventCode::Info, os.str())), false);
  }
  schedule_tick();
}

void StreamServer::Impl::handle(WsClient& from, const Message& m) {
  auto reply_error = [&](const std::string& what) {
    from.send(encode_message(event_message(EventCode::Error, what)));
  };
  if (auto action = to_action(m)) {
    try {
      session->submit(*action);
    } catch (const Error& e) {
      reply_error(e.what());
    }
    return;
  }
  if (const auto* c = std::get_if<ControlMsg>(&m)) return handle_control(from, static_cast<ControlCmd>(c->cmd));
  if (const auto* pick = std::get_if<PixelPickMsg>(&m)) {
    PickResultMsg out;
    out.point.fill(std::numeric_limits<float>::quiet_NaN());
    if (const auto p = session->pick(pick->u, pick->v))
      out.point = {static_cast<float>(p->x()), static_cast<float>(p->y()), static_cast<float>(p->z())};
    from.send(encode_message(out));
    return;
  }
  reply_error("message type " + std::to_string(static_cast<int>(message_type(m))) + " is server-to-client only");
}

void StreamServer::Impl::handle_control(WsClient& from, ControlCmd cmd) {
  auto ack = [&](const std::string& what) { from.send(encode_message(event_message(EventCode::Ack, what))); };
  auto fail = [&](const std::string& what) { from.send(encode_message(event_message(EventCode::Error, what))); };
  try {
    switch (cmd) {
      case ControlCmd::Reset:
        session->reset();
        return ack("reset");
      case ControlCmd::Pause:
        session->pause();
        return ack("pause");
      case ControlCmd::Resume:
        session->resume();
        return ack("resume");
      case ControlCmd::Snapshot:
        snapshot_slot = session->snapshot();
        return ack("snapshot " + std::to_string(snapshot_slot->size()) + " bytes");
      case ControlCmd::LoadSnapshot:
        if (!snapshot_slot) return fail("no snapshot stored");
        session->load_snapshot(*snapshot_slot);
        return ack("load_snapshot");
      case ControlCmd::SetConfig: {
        if (options.config_path.empty()) return fail("server was started without a config file");
        std::ifstream in(options.config_path);
        if (!in) return fail("cannot read " + options.config_path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        SessionConfig cfg = session->config();
        apply_config_json(cfg, ss.str());
        session->set_config(cfg);
        return ack("set_config");
      }
    }
  } catch (const Error& e) {
    return fail(e.what());
  }
}

StreamServer::StreamServer(std::unique_ptr<Session> session, ServerOptions options)
    : impl_(std::make_unique<Impl>(std::move(session), std::move(options))) {}

StreamServer::~StreamServer() = default;

unsigned short StreamServer::listen() {
  auto& s = *impl_;
  if (s.listening) return port();
  const tcp::endpoint ep(asio::ip::make_address(s.options.address), s.options.port);
  s.acceptor.open(ep.protocol());
  s.acceptor.set_option(asio::socket_base::reuse_address(true));
  s.acceptor.bind(ep);
  s.acceptor.listen();
  s.listening = true;
  return port();
}

void StreamServer::run() {
  auto& s = *impl_;
  listen();
  s.do_accept();
  s.deadline = Clock::now();
  s.schedule_tick();
  s.ioc.run();
  beast::error_code ignored;
  s.acceptor.close(ignored);
  s.clients.clear();
}

void StreamServer::stop() { impl_->ioc.stop(); }

unsigned short StreamServer::port() const { return impl_->acceptor.local_endpoint().port(); }

std::uint64_t StreamServer::ticks() const { return impl_->ticks.load(); }

}  // namespace actionflow
