#include "fedcyc/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>

namespace fedcyc {

std::size_t frame_cap_from_env() {
  const char* v = std::getenv("FEDCYC_FRAME_CAP");
  if (!v || !*v) return kDefaultFrameCap;
  std::size_t cap = 0;
  const char* end = v + std::strlen(v);
  auto [p, ec] = std::from_chars(v, end, cap);
  if (ec != std::errc{} || p != end || cap == 0) return kDefaultFrameCap;
  return cap;
}

namespace {

void check_cap(std::size_t size, std::size_t cap) {
  if (size > cap) {
    throw TransportError(TransportErrorKind::frame_too_large,
                         "frame of " + std::to_string(size) + " bytes exceeds cap " +
                             std::to_string(cap));
  }
}

[[noreturn]] void io_fail(const std::string& what) {
  throw TransportError(TransportErrorKind::io, what + ": " + std::strerror(errno));
}

}  // namespace

void send_message(Link& link, const GradientMessage& m) { link.send(encode(m)); }

GradientMessage recv_message(Link& link) {
  auto frame = link.recv();
  if (!frame) throw TransportError(TransportErrorKind::closed, "link closed");
  return decode(*frame);
}

void InProcessLink::send(std::span<const std::uint8_t> frame) {
  check_cap(frame.size(), cap_);
  {
    std::lock_guard lock(mu_);
    if (closed_) throw TransportError(TransportErrorKind::closed, "send on closed link");
    queue_.emplace_back(frame.begin(), frame.end());
  }
  ready_.notify_one();
}

std::optional<std::vector<std::uint8_t>> InProcessLink::recv() {
  std::unique_lock lock(mu_);
  ready_.wait(lock, [this] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  auto frame = std::move(queue_.front());
  queue_.pop_front();
  return frame;
}

void InProcessLink::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  ready_.notify_all();
}

TcpStream::TcpStream(int fd, std::size_t frame_cap) : fd_(fd), cap_(frame_cap) {}

TcpStream::TcpStream(TcpStream&& other) noexcept : fd_(other.fd_), cap_(other.cap_) {
  other.fd_ = -1;
}

TcpStream::~TcpStream() {
  if (fd_ >= 0) ::close(fd_);
}

TcpStream TcpStream::connect(const std::string& host, std::uint16_t port, std::size_t frame_cap) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) io_fail("socket");
  TcpStream s(fd, frame_cap);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw TransportError(TransportErrorKind::io, "bad IPv4 address " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) io_fail("connect");
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

void TcpStream::send_raw(std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

void TcpStream::send_frame(std::span<const std::uint8_t> frame) {
  check_cap(frame.size(), cap_);
  const auto len = static_cast<std::uint32_t>(frame.size());
  const std::uint8_t prefix[4] = {static_cast<std::uint8_t>(len), static_cast<std::uint8_t>(len >> 8),
                                  static_cast<std::uint8_t>(len >> 16),
                                  static_cast<std::uint8_t>(len >> 24)};
  send_raw(prefix);
  send_raw(frame);
}

bool TcpStream::read_exact(std::uint8_t* out, std::size_t n, bool allow_clean_eof) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd_, out + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      io_fail("recv");
    }
    if (r == 0) {
      if (got == 0 && allow_clean_eof) return false;
      throw TransportError(TransportErrorKind::closed_mid_frame,
                           "connection closed after " + std::to_string(got) + " of " +
                               std::to_string(n) + " bytes");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

std::optional<std::vector<std::uint8_t>> TcpStream::recv_frame() {
  std::uint8_t prefix[4];
  if (!read_exact(prefix, 4, true)) return std::nullopt;
  const std::size_t len = std::size_t{prefix[0]} | std::size_t{prefix[1]} << 8 |
                          std::size_t{prefix[2]} << 16 | std::size_t{prefix[3]} << 24;
  check_cap(len, cap_);
  std::vector<std::uint8_t> frame(len);
  read_exact(frame.data(), len, false);
  return frame;
}

void TcpStream::shutdown_write() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) io_fail("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw TransportError(TransportErrorKind::io, "bad IPv4 address " + host);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 64) < 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    io_fail("bind/listen on " + host + ":" + std::to_string(port));
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

TcpStream TcpListener::accept(std::size_t frame_cap) {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return TcpStream(fd, frame_cap);
    if (errno != EINTR) io_fail("accept");
  }
}

std::string_view transport_name(TransportKind k) {
  return k == TransportKind::in_process ? "in-process" : "tcp";
}

std::optional<TransportKind> parse_transport(std::string_view text) {
  if (text == "in-process" || text == "inprocess" || text == "memory") return TransportKind::in_process;
  if (text == "tcp") return TransportKind::tcp;
  return std::nullopt;
}

std::vector<std::unique_ptr<Link>> make_links(TransportKind kind, std::size_t count,
                                              const std::string& host, std::uint16_t port) {
  std::vector<std::unique_ptr<Link>> links;
  if (kind == TransportKind::in_process) {
    for (std::size_t i = 0; i < count; ++i) links.push_back(std::make_unique<InProcessLink>());
    return links;
  }
  TcpListener listener(host, port);
  for (std::size_t i = 0; i < count; ++i) {
    // Connect completes through the listen backlog, so a single thread can
    // open both ends in turn.
    TcpStream client = TcpStream::connect(host, listener.port());
    TcpStream server = listener.accept();
    links.push_back(std::make_unique<TcpLink>(std::move(client), std::move(server)));
  }
  return links;
}

}  // namespace fedcyc
