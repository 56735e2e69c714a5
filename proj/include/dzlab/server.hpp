#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dzlab/scenario.hpp"
#include "dzlab/session.hpp"

namespace dzlab {

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks an ephemeral port
  // Lockstep headless mode: the tick loop advances only on {"type":"step"}.
  bool fast = false;
  std::string store_dir = "sessions";
  ScenarioConfig defaults;
  bool verbose = false;
};

// "host:port", ":port" or "port".
std::pair<std::string, std::uint16_t> parse_address(const std::string& addr);

// Session service speaking one JSON object per message, either as
// newline-delimited text over TCP or as WebSocket text frames (a connection
// whose first bytes are an HTTP upgrade request).
//
//   client -> server: start | control | decision | abort | step (fast mode)
//   server -> client: state | ack | summary | aborted | error
class SessionServer {
 public:
  explicit SessionServer(ServerOptions options);
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  // Binds and starts accepting in a background thread. Returns the bound port.
  std::uint16_t start();
  // Blocks the calling thread until stop() is called from elsewhere.
  void wait();
  void stop();

  SessionManager& sessions() { return manager_; }

 private:
  void accept_loop();
  void handle(int fd);

  ServerOptions options_;
  SessionManager manager_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
};

// Blocking client for the line protocol, used by scripted drivers and tests.
class LineClient {
 public:
  LineClient(const std::string& host, std::uint16_t port);
  ~LineClient();
  LineClient(const LineClient&) = delete;
  LineClient& operator=(const LineClient&) = delete;

  void send(const nlohmann::json& message);
  // Next message, or nullopt on timeout / disconnect.
  std::optional<nlohmann::json> receive(int timeout_ms = 5000);
  // Skips messages until one of the given type arrives.
  std::optional<nlohmann::json> receive_type(const std::string& type, int timeout_ms = 5000);
  void close();

 private:
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace dzlab
