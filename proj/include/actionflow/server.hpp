#pragma once

// Network front end of a Session: one HTTP port that upgrades to a binary
// websocket carrying the wire protocol and otherwise serves static files.

#include "actionflow/session.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace actionflow {

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  std::filesystem::path static_dir;   // served for plain HTTP GETs; empty disables
  std::filesystem::path config_path;  // JSON config overrides, re-read on SetConfig
  bool send_depth = true;
  bool send_noise = true;
  /// Frame messages queued per client before new frames are dropped for it.
  std::size_t max_queued_frames = 32;
};

//! Drives the session at its target rate on a single I/O thread and fans the
//! conditioning stream out to every connected client.
class StreamServer {
 public:
  StreamServer(std::unique_ptr<Session> session, ServerOptions options);
  ~StreamServer();
  StreamServer(const StreamServer&) = delete;
  StreamServer& operator=(const StreamServer&) = delete;

  /// Binds the listening socket and returns the bound port.
  unsigned short listen();
  /// Serves until stop(); calls listen() first if needed.
  void run();
  /// Safe to call from any thread.
  void stop();

  unsigned short port() const;
  std::uint64_t ticks() const;

  struct Impl;  // connection handlers in server.cpp reach into it

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace actionflow
