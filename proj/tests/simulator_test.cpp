#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sigfuzz/errors.hpp"
#include "sigfuzz/simulator.hpp"
#include "support.hpp"

namespace sigfuzz {
namespace {

using S = L2capState;
using C = CommandKind;

// Independent reading of data/transitions.tsv keyed by names.
std::map<std::pair<std::string, std::string>, std::pair<std::string, std::string>> oracle_rows() {
  std::map<std::pair<std::string, std::string>, std::pair<std::string, std::string>> rows;
  std::ifstream in(testing::source_path("data/transitions.tsv"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() == 4) rows[{cols[0], cols[1]}] = {cols[2], cols[3]};
  }
  return rows;
}

// Job-valid commands for the jobs that lenient devices relax.
bool relaxed_by_lenient(const std::string& state, C e) {
  auto is = [&](std::initializer_list<C> cs) { return std::find(cs.begin(), cs.end(), e) != cs.end(); };
  if (state == "CLOSED" || state == "OPEN") return false;
  if (state == "WAIT_CONNECT" || state == "WAIT_CONNECT_RSP") return is({C::ConnectReq, C::ConnectRsp});
  if (state == "WAIT_CREATE" || state == "WAIT_CREATE_RSP") {
    return is({C::CreateChannelReq, C::CreateChannelRsp});
  }
  if (state == "WAIT_DISCONNECT") return is({C::DisconnectReq, C::DisconnectRsp});
  if (state.rfind("WAIT_MOVE", 0) == 0 || state == "WAIT_CONFIRM_RSP") {
    return is({C::MoveChannelReq, C::MoveChannelRsp, C::MoveChannelConfirmReq, C::MoveChannelConfirmRsp});
  }
  return is({C::ConfigReq, C::ConfigRsp});
}

void check_conformance(Strictness strictness) {
  auto rows = oracle_rows();
  ASSERT_EQ(rows.size(), kStateCount * kCommandCount);
  DeviceProfile profile = default_profile();
  profile.strictness = strictness;
  Simulator sim(profile);
  for (S s : kAllStates) {
    for (C e : kAllCommands) {
      std::string sn(state_name(s));
      auto [action, next] = rows.at({sn, std::string(command_name(e))});
      if (strictness == Strictness::Lenient && action == "Reject" && relaxed_by_lenient(sn, e)) {
        action = "Silent";
      }
      sim.force_state(s);
      HandleResult r = sim.handle(encode(default_packet(e, 0x01)));
      std::string where = sn + " + " + std::string(command_name(e));
      if (action == "Silent") {
        EXPECT_EQ(r.kind, HandleResult::Kind::Silence) << where;
      } else {
        ASSERT_EQ(r.kind, HandleResult::Kind::Response) << where;
        L2capPacket reply = decode(r.frame);
        C want = action == "Reject" ? C::CommandReject : *parse_command(action);
        EXPECT_EQ(reply.kind(), want) << where;
      }
      std::string want_state = next == "-" ? sn : next;
      EXPECT_EQ(state_name(sim.state()), want_state) << where;
    }
  }
}

TEST(Conformance, StrictDeviceFollowsTable) { check_conformance(Strictness::Strict); }

TEST(Conformance, LenientDeviceSilencesJobValidRejects) { check_conformance(Strictness::Lenient); }

TEST(Simulator, OversizedFrameRejectedWithMtu) {
  Simulator sim(default_profile());
  L2capPacket p = default_packet(C::EchoReq, 0x07);
  p.garbage_tail.assign(sim.profile().mtu + 1 - kCommandHeaderSize, 0xAA);
  p.recompute_lengths();
  HandleResult r = sim.handle(encode(p));
  ASSERT_EQ(r.kind, HandleResult::Kind::Response);
  L2capPacket reply = decode(r.frame);
  EXPECT_EQ(reply.kind(), C::CommandReject);
  EXPECT_EQ(reply.identifier, 0x07);
  EXPECT_EQ(reply.value_of(FieldName::Reason), kRejectMtuExceeded);
  EXPECT_EQ(reply.value_of(FieldName::Mtu), sim.profile().mtu);
  EXPECT_EQ(sim.state(), S::Closed);
}

TEST(Simulator, FrameAtMtuIsAccepted) {
  Simulator sim(default_profile());
  L2capPacket p = default_packet(C::EchoReq, 0x07);
  p.garbage_tail.assign(sim.profile().mtu - kCommandHeaderSize, 0xAA);
  p.recompute_lengths();
  L2capPacket reply = decode(sim.handle(encode(p)).frame);
  EXPECT_EQ(reply.kind(), C::EchoRsp);
}

TEST(Simulator, OutOfJobCommandRejected) {
  Simulator sim(default_profile());
  sim.force_state(S::WaitConnect);
  L2capPacket reply = decode(sim.handle(encode(default_packet(C::ConfigReq))).frame);
  EXPECT_EQ(reply.kind(), C::CommandReject);
  EXPECT_EQ(sim.state(), S::WaitConnect);
}

TEST(Simulator, MalformedFramesRejectedNotUnderstood) {
  Simulator sim(default_profile());
  Bytes frame = encode(default_packet(C::InfoReq, 0x03));
  frame[6] ^= 0x01;  // data length disagrees with the frame
  L2capPacket reply = decode(sim.handle(frame).frame);
  EXPECT_EQ(reply.value_of(FieldName::Reason), kRejectNotUnderstood);

  Bytes zero_id = encode(default_packet(C::InfoReq, 0x00), EncodeMode::Raw);
  EXPECT_EQ(decode(sim.handle(zero_id).frame).value_of(FieldName::Reason), kRejectNotUnderstood);

  Bytes unknown{0x04, 0x00, 0x01, 0x00, 0x7F, 0x01, 0x00, 0x00};
  EXPECT_EQ(decode(sim.handle(unknown).frame).value_of(FieldName::Reason), kRejectNotUnderstood);
}

TEST(Simulator, InvalidCidRejectCarriesCids) {
  Simulator sim(default_profile());
  sim.force_state(S::WaitConfig);
  L2capPacket p = default_packet(C::ConfigReq, 0x02);
  p.set(FieldName::Dcid, 0x1234);
  L2capPacket reply = decode(sim.handle(encode(p)).frame);
  EXPECT_EQ(reply.kind(), C::CommandReject);
  EXPECT_EQ(reply.value_of(FieldName::Reason), kRejectInvalidCid);
  EXPECT_EQ(reply.value_of(FieldName::Dcid), 0x1234);
  EXPECT_EQ(sim.state(), S::WaitConfig);
}

TEST(Simulator, ConnectWalksToConfig) {
  Simulator sim(default_profile());
  L2capPacket first = decode(sim.handle(encode(default_packet(C::ConnectReq, 1))).frame);
  EXPECT_EQ(first.kind(), C::ConnectRsp);
  EXPECT_EQ(first.value_of(FieldName::Result), 0x0001);
  EXPECT_EQ(sim.state(), S::WaitConnect);
  L2capPacket second = decode(sim.handle(encode(default_packet(C::ConnectReq, 2))).frame);
  EXPECT_EQ(second.value_of(FieldName::Result), 0x0000);
  EXPECT_EQ(second.value_of(FieldName::Dcid), first.value_of(FieldName::Dcid));
  EXPECT_EQ(sim.state(), S::WaitConfig);
}

TEST(Simulator, PairingPortsAreBlocked) {
  Simulator sim(default_profile());
  L2capPacket p = default_packet(C::ConnectReq, 1);
  p.set(FieldName::Psm, 0x0003);
  L2capPacket reply = decode(sim.handle(encode(p)).frame);
  EXPECT_EQ(reply.value_of(FieldName::Result), 0x0003);
  EXPECT_EQ(sim.state(), S::Closed);
  EXPECT_EQ(sim.probe(0x0003), LinkStatus::Refused);
  EXPECT_EQ(sim.probe(0x0001), LinkStatus::Ok);
  EXPECT_EQ(sim.probe(0x1001), LinkStatus::Refused);
}

BugProfile config_dos() {
  BugProfile b;
  b.label = "config-dos";
  b.trigger_job = Job::Configuration;
  b.trigger_command = C::ConfigReq;
  b.predicate = FieldPredicate::parse("DCID != 0x0040 && garbage_len > 0");
  b.symptom = SymptomKind::DoS;
  return b;
}

TEST(Simulator, DosBugKillsDevice) {
  DeviceProfile profile = default_profile();
  profile.bugs.push_back(config_dos());
  Simulator sim(profile);
  sim.force_state(S::WaitConfig);

  // Predicate not met: normal processing.
  L2capPacket benign = default_packet(C::ConfigReq, 1);
  benign.garbage_tail = {0x01};
  benign.recompute_lengths();
  EXPECT_EQ(sim.handle(encode(benign)).kind, HandleResult::Kind::Response);
  EXPECT_FALSE(sim.dead());

  sim.force_state(S::WaitConfig);
  L2capPacket bad = default_packet(C::ConfigReq, 2);
  bad.set(FieldName::Dcid, 0x0041);
  bad.garbage_tail = {0x01, 0x02};
  bad.recompute_lengths();
  EXPECT_EQ(sim.handle(encode(bad)).kind, HandleResult::Kind::Death);
  ASSERT_TRUE(sim.dead());
  EXPECT_EQ(sim.symptom()->bug_label, "config-dos");
  EXPECT_EQ(sim.probe(kSdpPsm), LinkStatus::Failed);
  EXPECT_EQ(sim.dead_receive_status(), LinkStatus::Timeout);
  EXPECT_EQ(sim.handle(encode(default_packet(C::EchoReq))).kind, HandleResult::Kind::Death);
  EXPECT_TRUE(sim.dumps().empty());
}

TEST(Simulator, BugOutsideItsJobDoesNotFire) {
  DeviceProfile profile = default_profile();
  profile.bugs.push_back(config_dos());
  Simulator sim(profile);
  sim.force_state(S::Open);
  L2capPacket p = default_packet(C::ConfigReq, 1);
  p.set(FieldName::Dcid, 0x0041);
  p.garbage_tail = {0x01};
  p.recompute_lengths();
  sim.handle(encode(p));
  EXPECT_FALSE(sim.dead());
}

TEST(Simulator, CrashWritesDumpAndSignals) {
  testing::TempDir dir;
  DeviceProfile profile = default_profile();
  BugProfile b;
  b.label = "create-crash";
  b.trigger_job = Job::Creation;
  b.trigger_command = C::CreateChannelReq;
  b.predicate = FieldPredicate::parse("garbage_len > 0");
  b.symptom = SymptomKind::Crash;
  b.crash_signal = CrashSignal::Reset;
  profile.bugs.push_back(b);
  Simulator sim(profile, TransitionTable::builtin(), dir.path());
  sim.force_state(S::WaitCreate);
  L2capPacket p = default_packet(C::CreateChannelReq, 9);
  p.garbage_tail = {0xEE};
  p.recompute_lengths();
  EXPECT_EQ(sim.handle(encode(p)).kind, HandleResult::Kind::Death);
  EXPECT_EQ(sim.probe(kSdpPsm), LinkStatus::Reset);
  EXPECT_EQ(sim.dead_receive_status(), LinkStatus::Reset);
  ASSERT_EQ(sim.dumps().size(), 1u);
  EXPECT_EQ(sim.dumps()[0].parent_path(), dir.path());
  std::ifstream in(sim.dumps()[0]);
  std::stringstream text;
  text << in.rdbuf();
  EXPECT_NE(text.str().find("SIGSEGV"), std::string::npos);
  EXPECT_NE(text.str().find("create-crash"), std::string::npos);
  EXPECT_NE(text.str().find("WAIT_CREATE"), std::string::npos);
}

TEST(Simulator, ResetIsIdempotent) {
  DeviceProfile profile = default_profile();
  profile.bugs.push_back(config_dos());
  Simulator sim(profile);
  sim.force_state(S::WaitConfig);
  L2capPacket bad = default_packet(C::ConfigReq, 2);
  bad.set(FieldName::Dcid, 0x0041);
  bad.garbage_tail = {0x01};
  bad.recompute_lengths();
  sim.handle(encode(bad));
  ASSERT_TRUE(sim.dead());
  for (int i = 0; i < 3; ++i) {
    sim.reset();
    EXPECT_FALSE(sim.dead());
    EXPECT_EQ(sim.state(), S::Closed);
    EXPECT_TRUE(sim.channels().empty());
    EXPECT_EQ(sim.probe(kSdpPsm), LinkStatus::Ok);
  }
}

TEST(Simulator, BugsAreDeterministic) {
  DeviceProfile profile = default_profile();
  profile.bugs.push_back(config_dos());
  L2capPacket bad = default_packet(C::ConfigReq, 2);
  bad.set(FieldName::Dcid, 0x0041);
  bad.garbage_tail = {0x01};
  bad.recompute_lengths();
  for (int i = 0; i < 5; ++i) {
    Simulator sim(profile);
    sim.force_state(S::WaitConfigRsp);
    sim.handle(encode(bad));
    EXPECT_TRUE(sim.dead());
  }
}

TEST(Simulator, BugFreeDeviceStaysAlive) {
  std::mt19937_64 g(99);
  Simulator sim(default_profile());
  for (int i = 0; i < 20000; ++i) {
    if (i % 50 == 0) sim.force_state(kAllStates[g() % kStateCount]);
    L2capPacket p = testing::random_packet(g, kAllCommands[g() % kCommandCount]);
    sim.handle(encode(p, EncodeMode::Raw));
    ASSERT_FALSE(sim.dead()) << "packet " << i;
  }
}

TEST(Simulator, ScanInfoAndPorts) {
  DeviceProfile p = default_profile();
  DeviceInfo info = scan_info(p);
  EXPECT_EQ(format_mac(info.mac), "00:1A:7D:DA:71:13");
  EXPECT_EQ(info.oui, 0x001A7Du);
  EXPECT_EQ(info.name, "sim-phone");
  EXPECT_EQ(info.device_class, "smartphone");
  auto ports = list_ports(p);
  ASSERT_EQ(ports.size(), 6u);
  EXPECT_EQ(ports[0], (ServicePort{0x0001, false}));
  EXPECT_EQ(ports[1], (ServicePort{0x0003, true}));

  Simulator sim(p);
  LocalTransport t(sim);
  EXPECT_EQ(t.device_info(), info);
  EXPECT_EQ(t.list_ports(), ports);
}

TEST(Profile, ValidateRejectsBadPorts) {
  DeviceProfile p = default_profile();
  p.service_ports = {{0x0003, false}};
  EXPECT_THROW(p.validate(), ConfigError);
  p.service_ports = {{0x0001, true}};
  EXPECT_THROW(p.validate(), ConfigError);
  p.service_ports = {{0x0001, false}, {0x0002, false}};
  EXPECT_THROW(p.validate(), ConfigError);
  p.service_ports = {{0x0001, false}, {0x0101, false}};
  EXPECT_THROW(p.validate(), ConfigError);
  p.service_ports = {{0x0001, false}, {0x1001, false}};
  EXPECT_NO_THROW(p.validate());
}

TEST(Predicate, ParsesAndMatches) {
  L2capPacket p = default_packet(C::ConfigReq, 1);
  EXPECT_TRUE(FieldPredicate::parse("").matches(p));
  EXPECT_TRUE(FieldPredicate::parse("true").matches(p));
  EXPECT_TRUE(FieldPredicate::parse("DCID == 0x0040").matches(p));
  EXPECT_FALSE(FieldPredicate::parse("DCID != 64").matches(p));
  EXPECT_FALSE(FieldPredicate::parse("PSM == 1").matches(p));  // absent field
  EXPECT_FALSE(FieldPredicate::parse("garbage_len >= 1").matches(p));
  p.garbage_tail = {1, 2, 3};
  p.recompute_lengths();
  EXPECT_TRUE(FieldPredicate::parse("garbage_len >= 3 AND DCID <= 0x40").matches(p));
  EXPECT_THROW(FieldPredicate::parse("NOPE == 1"), ConfigError);
  EXPECT_THROW(FieldPredicate::parse("DCID ~ 1"), ConfigError);
  EXPECT_THROW(FieldPredicate::parse("DCID == x"), ConfigError);
  EXPECT_THROW(FieldPredicate::parse("DCID == 1 || SCID == 2"), ConfigError);
}

TEST(LocalTransport, DeadDeviceReceives) {
  DeviceProfile profile = default_profile();
  profile.bugs.push_back(config_dos());
  Simulator sim(profile);
  LocalTransport t(sim);
  sim.force_state(S::WaitConfig);
  L2capPacket bad = default_packet(C::ConfigReq, 2);
  bad.set(FieldName::Dcid, 0x0041);
  bad.garbage_tail = {0x01};
  bad.recompute_lengths();
  t.send(encode(bad));
  EXPECT_EQ(t.receive(std::chrono::milliseconds(1)).status, LinkStatus::Timeout);
  EXPECT_FALSE(t.ping(0x10, std::chrono::milliseconds(1)).ok);
  EXPECT_TRUE(t.reset_target());
  EXPECT_TRUE(t.ping(0x11, std::chrono::milliseconds(1)).ok);
}

}  // namespace
}  // namespace sigfuzz
