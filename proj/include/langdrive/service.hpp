#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "langdrive/orchestrator.hpp"

namespace langdrive {

struct HttpReply {
  int status = 200;
  std::string body;  ///< JSON
};

/// Route table of the control API, independent of the transport:
/// POST /prompt {text}, GET /params, POST /params {name: value}, GET /journal.
HttpReply handle_api(Session& session, const std::string& method, const std::string& target,
                     const std::string& body);

/// Serve mode: paces the session to the wall clock and exposes the API over
/// HTTP plus WebSocket `/telemetry` frames at the session's telemetry rate.
/// Slow WebSocket clients drop frames instead of holding up the loop.
class Service {
 public:
  /// port 0 picks a free port.
  Service(Session& session, const std::string& host, int port);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void start();
  void stop();
  int port() const;
  bool running() const { return running_.load(); }
  std::size_t subscribers() const;

  struct Impl;  // transport internals, defined in service.cpp

 private:
  std::unique_ptr<Impl> impl_;
  std::atomic<bool> running_{false};
};

}  // namespace langdrive
