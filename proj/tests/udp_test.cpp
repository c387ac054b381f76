#include <gtest/gtest.h>

#include "sigfuzz/campaign.hpp"
#include "sigfuzz/codec.hpp"
#include "sigfuzz/config.hpp"
#include "sigfuzz/errors.hpp"
#include "sigfuzz/simulator.hpp"
#include "sigfuzz/udp.hpp"
#include "support.hpp"

namespace sigfuzz {
namespace {

using namespace std::chrono_literals;
using C = CommandKind;

DeviceProfile strict_profile() {
  return load_run_config(testing::source_path("profiles/strict.json")).device;
}

// Any InfoReq in the Closed job takes the device down.
DeviceProfile fragile_profile() {
  DeviceProfile p = strict_profile();
  BugProfile bug;
  bug.label = "info-dos";
  bug.trigger_job = Job::Closed;
  bug.trigger_command = C::InfoReq;
  bug.symptom = SymptomKind::DoS;
  p.bugs = {bug};
  return p;
}

TEST(Udp, MetaInformationAndPorts) {
  DeviceProfile p = strict_profile();
  UdpShimServer server(p);
  server.start();
  UdpTransport t("127.0.0.1", server.port());
  EXPECT_EQ(t.device_info(), scan_info(p));
  EXPECT_EQ(t.list_ports(), p.service_ports);
  EXPECT_EQ(t.connect(kSdpPsm), LinkStatus::Ok);
  server.stop();
}

TEST(Udp, SignalingExchangeAndPing) {
  UdpShimServer server(strict_profile());
  server.start();
  UdpTransport t("127.0.0.1", server.port());
  L2capPacket req = default_packet(C::ConnectReq, 1);
  t.send(encode(req));
  ReceiveResult rx = t.receive(500ms);
  ASSERT_EQ(rx.status, LinkStatus::Ok);
  L2capPacket rsp = decode(rx.frame);
  EXPECT_EQ(rsp.kind(), C::ConnectRsp);
  EXPECT_EQ(rsp.identifier, 1);
  EXPECT_EQ(server.device_state(), L2capState::WaitConnect);

  PingResult ping = t.ping(7, 500ms);
  EXPECT_TRUE(ping.ok);

  EXPECT_TRUE(t.reset_target());
  EXPECT_EQ(server.device_state(), L2capState::Closed);
  server.stop();
}

TEST(Udp, DeadDeviceAndReset) {
  UdpShimServer server(fragile_profile());
  server.start();
  UdpTransport t("127.0.0.1", server.port());
  t.send(encode(default_packet(C::InfoReq, 1)));
  ReceiveResult rx = t.receive(200ms);
  EXPECT_NE(rx.status, LinkStatus::Ok);
  EXPECT_TRUE(server.device_dead());
  EXPECT_FALSE(t.ping(2, 100ms).ok);
  EXPECT_NE(t.connect(kSdpPsm), LinkStatus::Ok);

  EXPECT_TRUE(t.reset_target());
  EXPECT_FALSE(server.device_dead());
  EXPECT_TRUE(t.ping(3, 500ms).ok);
  server.stop();
}

TEST(Udp, NoServerIsATransportError) {
  // Grab a free port, then close the server so nothing listens there.
  std::uint16_t port;
  {
    UdpShimServer server(strict_profile());
    port = server.port();
  }
  UdpTransport t("127.0.0.1", port, 100ms);
  EXPECT_THROW(t.device_info(), TransportError);
}

TEST(Udp, CampaignMatchesInProcessRun) {
  RunConfig rc = load_run_config(testing::source_path("profiles/strict.json"));
  rc.campaign.mutation.packets_per_command = 10;
  rc.campaign.mutation.seed = 3;
  rc.campaign.step_timeout = 100ms;

  Simulator sim(rc.device, TransitionTable::builtin());
  LocalTransport local(sim);
  MemorySink local_sink;
  CampaignLog a = run_campaign(local, TransitionTable::builtin(), rc.campaign, &local_sink);

  UdpShimServer server(rc.device);
  server.start();
  UdpTransport remote("127.0.0.1", server.port());
  MemorySink remote_sink;
  CampaignLog b = run_campaign(remote, TransitionTable::builtin(), rc.campaign, &remote_sink);
  server.stop();

  EXPECT_GE(b.metrics.states_covered.size(), 13u);
  EXPECT_TRUE(a.metrics.same_counts(b.metrics));
  EXPECT_EQ(local_sink.lines, remote_sink.lines);
}

}  // namespace
}  // namespace sigfuzz
