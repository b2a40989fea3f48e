#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedcyc/codec.hpp"

namespace fedcyc {

inline constexpr std::size_t kDefaultFrameCap = 64u << 20;

/// FEDCYC_FRAME_CAP (bytes) when set and valid, else kDefaultFrameCap.
std::size_t frame_cap_from_env();

enum class TransportErrorKind { closed_mid_frame, frame_too_large, io, closed };

class TransportError : public std::runtime_error {
 public:
  TransportError(TransportErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  TransportErrorKind kind() const { return kind_; }

 private:
  TransportErrorKind kind_;
};

/// One direction of a client-to-server connection carrying whole frames in
/// order. send() is the client end, recv() the server end; the two ends
/// may live on different threads.
class Link {
 public:
  virtual ~Link() = default;
  virtual void send(std::span<const std::uint8_t> frame) = 0;
  /// Next frame, or nullopt once the sender closed at a frame boundary.
  virtual std::optional<std::vector<std::uint8_t>> recv() = 0;
  /// Sender side: no more frames.
  virtual void close() = 0;
};

void send_message(Link& link, const GradientMessage& m);
/// Throws TransportError(closed) if the link closed instead.
GradientMessage recv_message(Link& link);

/// Mutex + condition-variable FIFO with the TCP link's semantics,
/// including the frame cap.
class InProcessLink final : public Link {
 public:
  explicit InProcessLink(std::size_t frame_cap = frame_cap_from_env()) : cap_(frame_cap) {}

  void send(std::span<const std::uint8_t> frame) override;
  std::optional<std::vector<std::uint8_t>> recv() override;
  void close() override;

 private:
  std::size_t cap_;
  std::mutex mu_;
  std::condition_variable ready_;
  std::deque<std::vector<std::uint8_t>> queue_;
  bool closed_ = false;
};

/// Connected TCP socket speaking u32 little-endian length-prefixed frames.
class TcpStream {
 public:
  explicit TcpStream(int fd, std::size_t frame_cap = frame_cap_from_env());
  TcpStream(TcpStream&& other) noexcept;
  TcpStream& operator=(TcpStream&&) = delete;
  ~TcpStream();

  static TcpStream connect(const std::string& host, std::uint16_t port,
                           std::size_t frame_cap = frame_cap_from_env());

  void send_frame(std::span<const std::uint8_t> frame);
  /// nullopt on orderly shutdown before a length prefix.
  std::optional<std::vector<std::uint8_t>> recv_frame();
  /// Raw bytes, bypassing framing; for tests that forge frames.
  void send_raw(std::span<const std::uint8_t> bytes);
  void shutdown_write();

 private:
  bool read_exact(std::uint8_t* out, std::size_t n, bool allow_clean_eof);

  int fd_ = -1;
  std::size_t cap_;
};

class TcpListener {
 public:
  /// Binds host:port; port 0 picks an ephemeral port.
  explicit TcpListener(const std::string& host = "127.0.0.1", std::uint16_t port = 0);
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener();

  std::uint16_t port() const { return port_; }
  TcpStream accept(std::size_t frame_cap = frame_cap_from_env());

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Both ends of one client connection over loopback TCP.
class TcpLink final : public Link {
 public:
  TcpLink(TcpStream client_end, TcpStream server_end)
      : client_(std::move(client_end)), server_(std::move(server_end)) {}

  void send(std::span<const std::uint8_t> frame) override { client_.send_frame(frame); }
  std::optional<std::vector<std::uint8_t>> recv() override { return server_.recv_frame(); }
  void close() override { client_.shutdown_write(); }

 private:
  TcpStream client_;
  TcpStream server_;
};

enum class TransportKind { in_process, tcp };

std::string_view transport_name(TransportKind k);
std::optional<TransportKind> parse_transport(std::string_view text);

/// `count` independent links, one per client. TCP links connect through a
/// loopback listener on `host`:`port` (0 = ephemeral).
std::vector<std::unique_ptr<Link>> make_links(TransportKind kind, std::size_t count,
                                              const std::string& host = "127.0.0.1",
                                              std::uint16_t port = 0);

}  // namespace fedcyc
