#pragma once

// Blocking request-reply transports. LocalTransport drives an in-process
// ArrayServer (used by tests and `--local` runs); TcpTransport speaks the
// framed-JSON protocol over a socket. Both count one message per roundtrip.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <string>

#include "lazyarr/server.hpp"
#include "lazyarr/wire.hpp"

namespace lazyarr {

namespace net {

inline void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    ssize_t k = ::send(fd, data + off, n - off, MSG_NOSIGNAL);
    if (k <= 0) fail("connection error", "send failed: " + std::string(std::strerror(errno)));
    off += static_cast<std::size_t>(k);
  }
}

// Returns false on clean EOF at a frame boundary.
inline bool read_exact(int fd, std::uint8_t* buf, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    ssize_t k = ::recv(fd, buf + off, n - off, 0);
    if (k == 0) {
      if (off == 0) return false;
      fail("connection error", "peer closed mid-frame");
    }
    if (k < 0) fail("connection error", "recv failed: " + std::string(std::strerror(errno)));
    off += static_cast<std::size_t>(k);
  }
  return true;
}

inline void write_frame(int fd, const json& body) {
  auto bytes = encode_frame(body);
  write_all(fd, bytes.data(), bytes.size());
}

// Empty optional on clean EOF.
inline std::optional<json> read_frame(int fd) {
  std::uint8_t header[4];
  if (!read_exact(fd, header, 4)) return std::nullopt;
  const std::uint32_t n = decode_frame_length(header);
  std::vector<std::uint8_t> body(n);
  if (n > 0 && !read_exact(fd, body.data(), n)) return std::nullopt;
  json parsed = json::parse(body.begin(), body.end());
  if (!parsed.is_object()) fail("encoding error", "frame body must be a JSON object");
  return parsed;
}

}  // namespace net

class Transport {
 public:
  virtual ~Transport() = default;
  virtual Reply roundtrip(const Request& req) = 0;

  // Cumulative client-side costs, split per the metrics categories.
  std::int64_t marshal_ns() const { return marshal_ns_; }
  std::int64_t transport_ns() const { return transport_ns_; }

 protected:
  std::int64_t marshal_ns_ = 0;
  std::int64_t transport_ns_ = 0;
};

// Direct dispatch into an in-process server. Skips the byte codec (covered by
// its own tests) but keeps identical message semantics and counts.
class LocalTransport : public Transport {
 public:
  explicit LocalTransport(ArrayServer& server) : server_(server) {}

  Reply roundtrip(const Request& req) override {
    auto t0 = std::chrono::steady_clock::now();
    Reply r = server_.handle(req, session_);
    transport_ns_ += std::chrono::duration_cast<std::chrono::nanoseconds>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return r;
  }

 private:
  ArrayServer& server_;
  ArrayServer::Session session_;
};

class TcpTransport : public Transport {
 public:
  TcpTransport(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port_str = std::to_string(port);
    if (::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res) != 0 || !res)
      fail("connection error", "cannot resolve " + host);
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0)
      fail("connection error", "cannot connect to " + host + ":" + port_str);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    fd_ = fd;
  }

  ~TcpTransport() override {
    if (fd_ >= 0) ::close(fd_);
  }

  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  Reply roundtrip(const Request& req) override {
    using clock = std::chrono::steady_clock;
    auto lap = [last = clock::now()]() mutable {
      auto now = clock::now();
      auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(now - last).count();
      last = now;
      return ns;
    };
    auto bytes = encode_frame(request_to_json(req));
    marshal_ns_ += lap();
    net::write_all(fd_, bytes.data(), bytes.size());
    auto body = net::read_frame(fd_);
    transport_ns_ += lap();
    if (!body) fail("connection error", "server closed connection");
    Reply reply = reply_from_json(*body);
    marshal_ns_ += lap();
    if (reply.tag != req.tag)
      fail("connection error", "reply tag mismatch");
    return reply;
  }

 private:
  int fd_ = -1;
};

}  // namespace lazyarr
