#include <gtest/gtest.h>

#include <cstdlib>
#include <random>
#include <thread>

#include "fedcyc/transport.hpp"

using namespace fedcyc;

namespace {

GradientMessage numbered(std::uint32_t i) {
  GradientMessage m;
  m.round = i;
  m.client = i % 5;
  m.step = static_cast<StepKind>(i % 3);
  ParamGroup g(Role::G);
  std::mt19937 rng(i);
  const std::size_t n = 1 + i % 17;
  std::vector<float> v(n);
  for (auto& x : v) x = std::uniform_real_distribution<float>(-1, 1)(rng);
  g.add("p", Tensor({n}, std::move(v)));
  m.groups.push_back(std::move(g));
  return m;
}

void loopback(Link& link, int count) {
  std::thread sender([&] {
    for (int i = 0; i < count; ++i) send_message(link, numbered(static_cast<std::uint32_t>(i)));
    link.close();
  });
  for (int i = 0; i < count; ++i) {
    const auto m = recv_message(link);
    ASSERT_TRUE(bitwise_equal(m, numbered(static_cast<std::uint32_t>(i)))) << "message " << i;
  }
  EXPECT_FALSE(link.recv().has_value());
  sender.join();
}

}  // namespace

TEST(Transport, InProcessLoopbackPreservesOrder) {
  InProcessLink link;
  loopback(link, 1000);
}

TEST(Transport, TcpLoopbackPreservesOrder) {
  auto links = make_links(TransportKind::tcp, 1);
  loopback(*links[0], 1000);
}

TEST(Transport, ManyTcpLinksAreIndependent) {
  auto links = make_links(TransportKind::tcp, 4);
  for (std::uint32_t i = 0; i < 4; ++i) send_message(*links[i], numbered(i));
  for (std::uint32_t i = 4; i-- > 0;) EXPECT_EQ(recv_message(*links[i]).round, i);
}

TEST(Transport, FrameCapRejectsOversizedFrames) {
  const std::vector<std::uint8_t> frame(65, 0);
  InProcessLink mem(64);
  try {
    mem.send(frame);
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.kind(), TransportErrorKind::frame_too_large);
  }

  // receiver checks the declared length before allocating anything
  TcpListener listener;
  auto client = TcpStream::connect("127.0.0.1", listener.port());
  auto server = listener.accept(1024);
  const std::uint8_t huge[4] = {0xFF, 0xFF, 0xFF, 0x7F};
  client.send_raw(huge);
  try {
    server.recv_frame();
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.kind(), TransportErrorKind::frame_too_large);
  }
}

TEST(Transport, CloseMidFrameIsAnError) {
  TcpListener listener;
  auto client = TcpStream::connect("127.0.0.1", listener.port());
  auto server = listener.accept();
  const std::uint8_t partial[6] = {10, 0, 0, 0, 1, 2};
  client.send_raw(partial);
  client.shutdown_write();
  try {
    server.recv_frame();
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.kind(), TransportErrorKind::closed_mid_frame);
  }
}

TEST(Transport, CleanCloseEndsStream) {
  auto links = make_links(TransportKind::tcp, 1);
  links[0]->close();
  EXPECT_FALSE(links[0]->recv().has_value());
  EXPECT_THROW(recv_message(*links[0]), TransportError);
}

TEST(Transport, FrameCapFromEnvironment) {
  ::setenv("FEDCYC_FRAME_CAP", "4096", 1);
  EXPECT_EQ(frame_cap_from_env(), 4096u);
  ::setenv("FEDCYC_FRAME_CAP", "junk", 1);
  EXPECT_EQ(frame_cap_from_env(), kDefaultFrameCap);
  ::unsetenv("FEDCYC_FRAME_CAP");
  EXPECT_EQ(frame_cap_from_env(), kDefaultFrameCap);
}

TEST(Transport, ParseNames) {
  EXPECT_EQ(parse_transport("tcp"), TransportKind::tcp);
  EXPECT_EQ(parse_transport("in-process"), TransportKind::in_process);
  EXPECT_FALSE(parse_transport("udp"));
}
