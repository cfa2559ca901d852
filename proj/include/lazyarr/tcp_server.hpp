#pragma once

// TCP front end for ArrayServer: one session thread per connection, frames
// in, frames out, until a shutdown command or stop().

#include <poll.h>

#include <cstdio>
#include <thread>
#include <vector>

#include "lazyarr/transport.hpp"

namespace lazyarr {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level_from_name(const std::string& s) {
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  fail("usage error", "unknown log level '" + s + "'");
}

class TcpArrayServer {
 public:
  TcpArrayServer(ServerOptions opts, std::uint16_t port, LogLevel log = LogLevel::Error)
      : server_(opts), log_(log) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) fail("connection error", "socket failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      fail("connection error",
           "cannot bind port " + std::to_string(port) + ": " + std::strerror(errno));
    }
    if (::listen(listen_fd_, 16) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      fail("connection error", "listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    log_line(LogLevel::Info, "listening on port " + std::to_string(port_));
  }

  ~TcpArrayServer() { stop(); }

  TcpArrayServer(const TcpArrayServer&) = delete;
  TcpArrayServer& operator=(const TcpArrayServer&) = delete;

  std::uint16_t port() const { return port_; }
  ArrayServer& array_server() { return server_; }

  // Blocks until shutdown is requested (by command or stop()).
  void serve() {
    while (!stopping_.load() && !server_.shutdown_requested()) {
      pollfd pfd{listen_fd_, POLLIN, 0};
      const int r = ::poll(&pfd, 1, 100);
      if (r < 0) break;
      if (r == 0) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      log_line(LogLevel::Info, "session opened");
      {
        std::scoped_lock lock(session_mu_);
        session_fds_.push_back(fd);
      }
      session_threads_.emplace_back([this, fd] { session_loop(fd); });
    }
    close_sessions();
    for (auto& t : session_threads_) t.join();
    session_threads_.clear();
    if (listen_fd_ >= 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
  }

  void start_background() {
    background_ = std::thread([this] { serve(); });
  }

  // Async-signal-safe: just flips the flag the accept loop polls.
  void request_stop() { stopping_.store(true); }

  void stop() {
    stopping_.store(true);
    if (background_.joinable()) background_.join();
    if (listen_fd_ >= 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
  }

 private:
  void session_loop(int fd) {
    ArrayServer::Session session;
    while (true) {
      std::optional<json> body;
      try {
        body = net::read_frame(fd);
      } catch (const std::exception&) {
        break;
      }
      if (!body) break;
      Reply reply;
      std::uint64_t tag = 0;
      try {
        Request req = request_from_json(*body);
        tag = req.tag;
        log_line(LogLevel::Debug, "cmd " + req.cmd);
        reply = server_.handle(req, session);
      } catch (const std::exception& e) {
        reply.tag = tag;
        reply.ok = false;
        reply.error = std::string("schema error: ") + e.what();
      }
      try {
        net::write_frame(fd, reply_to_json(reply));
      } catch (const std::exception&) {
        break;
      }
      if (server_.shutdown_requested()) {
        stopping_.store(true);
        break;
      }
    }
    ::close(fd);
    log_line(LogLevel::Info, "session closed");
  }

  void close_sessions() {
    std::scoped_lock lock(session_mu_);
    for (int fd : session_fds_) ::shutdown(fd, SHUT_RDWR);
    session_fds_.clear();
  }

  void log_line(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) <= static_cast<int>(log_))
      std::fprintf(stderr, "[lazyarr-server] %s\n", msg.c_str());
  }

  ArrayServer server_;
  LogLevel log_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex session_mu_;
  std::vector<int> session_fds_;
  std::vector<std::thread> session_threads_;
  std::thread background_;
};

}  // namespace lazyarr
