#include "dzlab/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>

#include <fmt/format.h>

#include "dzlab/errors.hpp"

namespace dzlab {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::pair<std::string, std::uint16_t> parse_address(const std::string& addr) {
  std::string host = "127.0.0.1";
  std::string port = addr;
  if (const auto colon = addr.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = addr.substr(0, colon);
    port = addr.substr(colon + 1);
  }
  try {
    const int p = std::stoi(port);
    if (p < 0 || p > 65535) throw ConfigError("port out of range");
    return {host, static_cast<std::uint16_t>(p)};
  } catch (const std::logic_error&) {
    throw ConfigError("invalid address '" + addr + "'");
  }
}

namespace {

bool send_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w <= 0) {
      if (w < 0 && errno == EINTR) continue;
      return false;
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

std::string websocket_accept(const std::string& key) {
  const std::string src = key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(src.data()), src.size(), digest);
  unsigned char out[64];
  const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(out), static_cast<std::size_t>(n));
}

// Message framing over one accepted socket: newline-delimited JSON, or
// WebSocket text frames after an HTTP upgrade.
class Connection {
 public:
  explicit Connection(int fd) : fd_(fd) {}

  // Appends complete messages; false once the peer is gone.
  bool read(std::vector<std::string>& out, int timeout_ms) {
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, timeout_ms);
    if (r < 0) return errno == EINTR;
    if (r == 0) return true;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) return false;
    buf_.append(chunk, static_cast<std::size_t>(n));
    if (!mode_decided_) {
      if (buf_.size() < 4) return true;
      websocket_ = buf_.compare(0, 4, "GET ") == 0;
      mode_decided_ = true;
    }
    if (websocket_ && !handshake_done_) {
      const auto end = buf_.find("\r\n\r\n");
      if (end == std::string::npos) return buf_.size() < 16384;
      if (!handshake(buf_.substr(0, end))) return false;
      buf_.erase(0, end + 4);
      handshake_done_ = true;
    }
    return websocket_ ? parse_frames(out) : parse_lines(out);
  }

  bool send(const std::string& msg) {
    if (!websocket_) {
      const std::string line = msg + '\n';
      return send_all(fd_, line.data(), line.size());
    }
    return send_frame(0x1, msg);
  }

 private:
  bool parse_lines(std::vector<std::string>& out) {
    std::size_t pos;
    while ((pos = buf_.find('\n')) != std::string::npos) {
      std::string line = buf_.substr(0, pos);
      buf_.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) out.push_back(std::move(line));
    }
    return buf_.size() < (1u << 20);
  }

  bool handshake(const std::string& request) {
    std::string key;
    std::size_t start = 0;
    while (start < request.size()) {
      auto end = request.find("\r\n", start);
      if (end == std::string::npos) end = request.size();
      const std::string line = request.substr(start, end - start);
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string name = line.substr(0, colon);
        std::transform(name.begin(), name.end(), name.begin(), ::tolower);
        if (name == "sec-websocket-key") {
          key = line.substr(colon + 1);
          key.erase(0, key.find_first_not_of(' '));
          key.erase(key.find_last_not_of(' ') + 1);
        }
      }
      start = end + 2;
    }
    if (key.empty()) {
      const std::string resp = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n";
      send_all(fd_, resp.data(), resp.size());
      return false;
    }
    const std::string resp = fmt::format(
        "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
        "Sec-WebSocket-Accept: {}\r\n\r\n",
        websocket_accept(key));
    return send_all(fd_, resp.data(), resp.size());
  }

  bool parse_frames(std::vector<std::string>& out) {
    while (buf_.size() >= 2) {
      const auto b0 = static_cast<unsigned char>(buf_[0]);
      const auto b1 = static_cast<unsigned char>(buf_[1]);
      const bool fin = b0 & 0x80;
      const int opcode = b0 & 0x0F;
      const bool masked = b1 & 0x80;
      std::uint64_t len = b1 & 0x7F;
      std::size_t off = 2;
      if (len == 126) {
        if (buf_.size() < 4) return true;
        len = (static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[2])) << 8) |
              static_cast<unsigned char>(buf_[3]);
        off = 4;
      } else if (len == 127) {
        if (buf_.size() < 10) return true;
        len = 0;
        for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<unsigned char>(buf_[2 + i]);
        off = 10;
      }
      if (len > (1u << 20)) return false;
      const std::size_t need = off + (masked ? 4 : 0) + len;
      if (buf_.size() < need) return true;
      std::string payload = buf_.substr(off + (masked ? 4 : 0), len);
      if (masked) {
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= buf_[off + (i % 4)];
      }
      buf_.erase(0, need);
      switch (opcode) {
        case 0x0:
        case 0x1:
          fragment_ += payload;
          if (fin) {
            out.push_back(std::move(fragment_));
            fragment_.clear();
          }
          break;
        case 0x8:
          send_frame(0x8, "");
          return false;
        case 0x9:
          send_frame(0xA, payload);
          break;
        default:
          break;
      }
    }
    return true;
  }

  bool send_frame(int opcode, const std::string& payload) {
    std::string frame;
    frame.push_back(static_cast<char>(0x80 | opcode));
    if (payload.size() < 126) {
      frame.push_back(static_cast<char>(payload.size()));
    } else if (payload.size() < 65536) {
      frame.push_back(static_cast<char>(126));
      frame.push_back(static_cast<char>((payload.size() >> 8) & 0xFF));
      frame.push_back(static_cast<char>(payload.size() & 0xFF));
    } else {
      frame.push_back(static_cast<char>(127));
      for (int i = 7; i >= 0; --i) frame.push_back(static_cast<char>((payload.size() >> (8 * i)) & 0xFF));
    }
    frame += payload;
    return send_all(fd_, frame.data(), frame.size());
  }

  int fd_;
  std::string buf_;
  std::string fragment_;
  bool mode_decided_ = false;
  bool websocket_ = false;
  bool handshake_done_ = false;
};

json error_message(const std::string& code, const std::string& message) {
  return {{"type", "error"}, {"code", code}, {"message", message}};
}

json ack_message(const Ack& a) {
  json j{{"type", "ack"}, {"accepted", a.accepted}};
  if (!a.accepted) j["reason"] = a.reason;
  return j;
}

}  // namespace

SessionServer::SessionServer(ServerOptions options)
    : options_(std::move(options)), manager_(options_.defaults, options_.store_dir) {}

SessionServer::~SessionServer() { stop(); }

std::uint16_t SessionServer::start() {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw ConfigError("socket() failed");
  const int yes = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.port);
  if (::inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1) {
    throw ConfigError("invalid IPv4 host '" + options_.host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(listen_fd_);
    throw ConfigError(fmt::format("cannot bind {}:{}: {}", options_.host, options_.port,
                                  std::strerror(errno)));
  }
  ::listen(listen_fd_, 16);
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
  return ntohs(addr.sin_port);
}

void SessionServer::wait() {
  while (running_) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

void SessionServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(workers_mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& w : workers) w.join();
}

void SessionServer::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int yes = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
    std::lock_guard lock(workers_mu_);
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { handle(fd); });
  }
}

void SessionServer::handle(int fd) {
  Connection conn(fd);
  std::shared_ptr<Session> active;
  Clock::time_point next_tick{};
  Clock::duration tick_dt{};

  auto log = [&](const std::string& msg) {
    if (options_.verbose) fmt::print(stderr, "[session] {}\n", msg);
  };
  auto send = [&](const json& j) { return conn.send(j.dump()); };

  // Advances one tick and reports it; finishes the session when done.
  auto advance = [&]() {
    active->tick();
    send(active->state_message());
    if (active->done()) {
      const Episode e = manager_.finish(active);
      send(active->summary_message(e));
      log(fmt::format("{} finished after {} ticks", active->id(), e.samples.size() - 1));
      active.reset();
    }
  };

  auto on_message = [&](const std::string& text) {
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::parse_error& e) {
      send(error_message("bad_request", e.what()));
      return;
    }
    if (!msg.is_object()) return void(send(error_message("bad_request", "message must be a JSON object")));
    const std::string type = msg.value("type", "");
    try {
      if (type == "start") {
        if (active) {
          send(error_message("conflict", "a session is already running on this connection"));
          return;
        }
        std::optional<json> cfg;
        if (msg.contains("config")) cfg = msg.at("config");
        const std::uint64_t seed = msg.value("seed", std::uint64_t{0});
        active = manager_.start(msg.at("driver_id").get<std::string>(), seed, cfg);
        tick_dt = std::chrono::duration_cast<Clock::duration>(
            std::chrono::duration<double>(active->scenario().dt_s));
        next_tick = Clock::now() + tick_dt;
        log(fmt::format("{} started", active->id()));
        send(active->state_message());
      } else if (type == "control") {
        if (!active) return void(send(ack_message({false, "no running session"})));
        send(ack_message(active->apply_control(
            {msg.at("throttle").get<double>(), msg.at("brake").get<double>()})));
      } else if (type == "decision") {
        if (!active) return void(send(ack_message({false, "no running session"})));
        Decision d;
        try {
          d = decision_from_string(msg.at("choice").get<std::string>());
        } catch (const ConfigError& e) {
          return void(send(error_message("bad_request", e.what())));
        }
        send(ack_message(active->apply_decision(d)));
      } else if (type == "abort") {
        if (active) {
          log(fmt::format("{} aborted; episode discarded", active->id()));
          manager_.abort(active);
          active.reset();
        }
        send({{"type", "aborted"}});
      } else if (type == "step") {
        if (!options_.fast) return void(send(error_message("bad_request", "step requires --fast mode")));
        if (!active) return void(send(error_message("bad_request", "no running session")));
        const int n = msg.value("n", 1);
        for (int i = 0; i < n && active; ++i) advance();
      } else {
        send(error_message("bad_request", "unknown message type '" + type + "'"));
      }
    } catch (const SessionConflict& e) {
      send(error_message("conflict", e.what()));
    } catch (const ConfigError& e) {
      send(error_message("invalid_config", e.what()));
    } catch (const json::exception& e) {
      send(error_message("bad_request", e.what()));
    }
  };

  std::vector<std::string> inbox;
  bool connected = true;
  while (connected && running_) {
    int timeout_ms = 100;
    if (active && !options_.fast) {
      const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(next_tick - Clock::now());
      timeout_ms = static_cast<int>(std::max<long>(0, wait.count()));
    }
    inbox.clear();
    connected = conn.read(inbox, timeout_ms);
    for (const auto& m : inbox) on_message(m);
    if (connected && active && !options_.fast && Clock::now() >= next_tick) {
      advance();
      // Absolute schedule: late ticks do not push later ones back.
      next_tick += tick_dt;
    }
  }
  if (active) {
    log(fmt::format("{} disconnected; episode discarded", active->id()));
    manager_.abort(active);
  }
  {
    std::lock_guard lock(workers_mu_);
    client_fds_.erase(std::remove(client_fds_.begin(), client_fds_.end(), fd), client_fds_.end());
  }
  ::close(fd);
}

LineClient::LineClient(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw ConfigError(fmt::format("cannot connect to {}:{}", host, port));
  }
  const int yes = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
}

LineClient::~LineClient() { close(); }

void LineClient::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void LineClient::send(const json& message) {
  const std::string line = message.dump() + '\n';
  if (fd_ < 0 || !send_all(fd_, line.data(), line.size())) {
    throw ConfigError("client send failed");
  }
}

std::optional<json> LineClient::receive(int timeout_ms) {
  const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
  while (true) {
    if (const auto pos = buffer_.find('\n'); pos != std::string::npos) {
      const std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      return json::parse(line);
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0 || fd_ < 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return std::nullopt;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::optional<json> LineClient::receive_type(const std::string& type, int timeout_ms) {
  while (auto m = receive(timeout_ms)) {
    if (m->value("type", "") == type) return m;
  }
  return std::nullopt;
}

}  // namespace dzlab
