#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sigfuzz/campaign.hpp"
#include "sigfuzz/config.hpp"
#include "sigfuzz/errors.hpp"
#include "sigfuzz/simulator.hpp"
#include "support.hpp"

namespace sigfuzz {
namespace {

using S = L2capState;
using json = nlohmann::json;

RunConfig profile(const std::string& name) {
  return load_run_config(testing::source_path("profiles/" + name));
}

struct Outcome {
  CampaignLog log;
  std::vector<json> lines;
  std::vector<std::string> raw;
};

Outcome run(const RunConfig& rc, std::filesystem::path dump_dir = {}) {
  Simulator sim(rc.device, TransitionTable::builtin(), dump_dir);
  LocalTransport transport(sim);
  CampaignConfig cfg = rc.campaign;
  cfg.dump_dir = dump_dir;
  MemorySink sink;
  Outcome r;
  r.log = run_campaign(transport, TransitionTable::builtin(), cfg, &sink);
  r.raw = sink.lines;
  for (const auto& l : sink.lines) r.lines.push_back(json::parse(l));
  return r;
}

RunConfig small(RunConfig rc, std::size_t n = 100, std::uint64_t seed = 7) {
  rc.campaign.mutation.packets_per_command = n;
  rc.campaign.mutation.seed = seed;
  return rc;
}

std::set<S> tested(const CampaignLog& log) {
  std::set<S> out;
  for (const auto& s : log.states) {
    if (s.status == StateOutcome::Status::Tested) out.insert(s.state);
  }
  return out;
}

TEST(Campaign, BugFreeCoverageAndDeterminism) {
  RunConfig rc = small(profile("strict.json"));
  Outcome a = run(rc);
  Outcome b = run(rc);
  EXPECT_GE(a.log.metrics.states_covered.size(), 13u);
  EXPECT_LE(a.log.metrics.states_covered.size(), kStateCount);
  EXPECT_EQ(a.log.metrics.states_covered, tested(a.log));
  EXPECT_TRUE(a.log.vulnerabilities.empty());
  EXPECT_FALSE(a.log.halted);
  EXPECT_EQ(a.raw, b.raw);
  EXPECT_TRUE(a.log.metrics.same_counts(b.log.metrics));
  ASSERT_FALSE(a.lines.empty());
  EXPECT_EQ(a.lines.front()["type"], "config");
  EXPECT_EQ(a.lines.back()["type"], "end");
}

TEST(Campaign, DifferentSeedsDiffer) {
  Outcome a = run(small(profile("strict.json"), 20, 1));
  Outcome b = run(small(profile("strict.json"), 20, 2));
  EXPECT_NE(a.raw, b.raw);
}

TEST(Campaign, LogRecomputesLiveCounters) {
  for (MutationMode mode : {MutationMode::CoreField, MutationMode::Baseline}) {
    RunConfig rc = small(profile("strict.json"), 50);
    rc.campaign.mode = mode;
    Outcome r = run(rc);
    std::ostringstream text;
    for (const auto& l : r.raw) text << l << "\n";
    std::istringstream in(text.str());
    CampaignMetrics again = metrics_from_jsonl(in);
    EXPECT_TRUE(again.same_counts(r.log.metrics)) << mutation_mode_name(mode);
  }
}

// Every fuzz packet follows a confirmed guide to its state and carries a
// command valid for that state's job.
TEST(Campaign, PhaseOrderingAndCommandValidity) {
  Outcome r = run(small(profile("strict.json"), 30));
  std::optional<std::string> guided;
  std::size_t fuzz = 0;
  for (const auto& j : r.lines) {
    std::string type = j["type"];
    if (type == "guide") {
      guided.reset();
      if (j["result"] == "reached") guided = j["target"].get<std::string>();
    } else if (type == "packet" && j["phase"] == "fuzz") {
      ++fuzz;
      ASSERT_TRUE(guided) << j.dump();
      ASSERT_EQ(j["state"], *guided) << j.dump();
      S s = *parse_state(j["state"].get<std::string>());
      auto valid = valid_commands(job_of(s));
      auto cmd = parse_command(j["record"]["base_command"].get<std::string>());
      ASSERT_TRUE(cmd);
      ASSERT_NE(std::find(valid.begin(), valid.end(), *cmd), valid.end()) << j.dump();
      ASSERT_TRUE(j.contains("verdict"));
    }
  }
  EXPECT_GT(fuzz, 0u);
}

TEST(Campaign, SeqIsStrictlyIncreasing) {
  Outcome r = run(small(profile("strict.json"), 10));
  for (std::size_t i = 0; i < r.lines.size(); ++i) {
    ASSERT_EQ(r.lines[i]["seq"].get<std::uint64_t>(), i + 1);
  }
}

TEST(Campaign, ConfigurationDosIsFoundAndHalts) {
  RunConfig rc = profile("config-dos.json");
  rc.campaign.mutation.seed = 7;
  Outcome r = run(rc);
  ASSERT_EQ(r.log.vulnerabilities.size(), 1u);
  const Vulnerability& v = r.log.vulnerabilities[0];
  EXPECT_EQ(v.verdict.severity, Severity::DoS);
  EXPECT_EQ(job_of(v.state), Job::Configuration);
  EXPECT_LT(v.packets_before, 50000u);
  EXPECT_TRUE(r.log.halted);
  // The logged record is the trigger.
  L2capPacket p = decode(v.record.wire);
  EXPECT_EQ(p.kind(), CommandKind::ConfigReq);
  EXPECT_NE(p.value_of(FieldName::Dcid), 0x0040);
  EXPECT_FALSE(p.garbage_tail.empty());
  // Nothing is fuzzed after the finding.
  bool after = false;
  for (const auto& j : r.lines) {
    if (j["type"] == "vulnerability") {
      after = true;
      EXPECT_EQ(j["record"]["wire"], to_hex(v.record.wire));
      EXPECT_EQ(j["severity"], "DoS");
    } else if (after) {
      EXPECT_NE(j["type"], "packet") << j.dump();
    }
  }
  EXPECT_TRUE(after);
}

TEST(Campaign, CreateCrashFoundInWaitCreateWithDump) {
  testing::TempDir dir;
  RunConfig rc = profile("create-crash.json");
  rc.campaign.mutation.seed = 7;
  Outcome r = run(rc, dir.path());
  ASSERT_EQ(r.log.vulnerabilities.size(), 1u);
  const Vulnerability& v = r.log.vulnerabilities[0];
  EXPECT_EQ(v.state, S::WaitCreate);
  EXPECT_EQ(v.verdict.severity, Severity::Crash);
  EXPECT_LT(v.packets_before, 50000u);
  ASSERT_TRUE(v.verdict.dump);
  EXPECT_TRUE(std::filesystem::exists(*v.verdict.dump));
  EXPECT_EQ(v.verdict.dump->parent_path(), dir.path());
}

TEST(Campaign, CreateCrashNeedsWaitCreate) {
  RunConfig rc = small(profile("create-crash.json"), 100);
  rc.campaign.states = StateFilter::parse("!WAIT_CREATE");
  Outcome r = run(rc);
  EXPECT_TRUE(r.log.vulnerabilities.empty());
  EXPECT_FALSE(r.log.metrics.states_covered.count(S::WaitCreate));
}

TEST(Campaign, EveryProfileHalts) {
  for (const char* name : {"strict.json", "lenient.json", "config-dos.json", "create-crash.json"}) {
    Outcome r = run(small(profile(name), 30));
    EXPECT_EQ(r.lines.back()["type"], "end") << name;
  }
}

TEST(Campaign, MoveFilterDropsReachableMoveStates) {
  Outcome full = run(small(profile("strict.json"), 20));
  RunConfig rc = small(profile("strict.json"), 20);
  rc.campaign.states = StateFilter::parse("!Move");
  Outcome cut = run(rc);
  std::set<S> move_reached;
  for (S s : full.log.metrics.states_covered) {
    if (job_of(s) == Job::Move) move_reached.insert(s);
  }
  EXPECT_FALSE(move_reached.empty());
  std::set<S> diff;
  for (S s : full.log.metrics.states_covered) {
    if (!cut.log.metrics.states_covered.count(s)) diff.insert(s);
  }
  EXPECT_EQ(diff, move_reached);
  EXPECT_EQ(full.log.metrics.states_covered.size() - cut.log.metrics.states_covered.size(),
            move_reached.size());
}

TEST(Campaign, BaselineClosedOnlyCoversOneState) {
  RunConfig rc = small(profile("strict.json"), 50);
  rc.campaign.mode = MutationMode::Baseline;
  rc.campaign.states = StateFilter::parse("Closed");
  Outcome r = run(rc);
  EXPECT_EQ(r.log.metrics.states_covered, (std::set<S>{S::Closed}));
}

TEST(Campaign, CoreBeatsBaselineEfficiency) {
  RunConfig core = small(profile("strict.json"), 200);
  RunConfig base = core;
  base.campaign.mode = MutationMode::Baseline;
  Outcome c = run(core);
  Outcome b = run(base);
  double ec = mutation_efficiency(c.log.metrics);
  double eb = mutation_efficiency(b.log.metrics);
  EXPECT_GT(ec, eb);
  EXPECT_GT(eb, 0.0);
  EXPECT_GT(pr_ratio(b.log.metrics), pr_ratio(c.log.metrics));
}

TEST(Campaign, MorePortsMorePacketsToDetection) {
  RunConfig six = profile("ports-6.json");
  RunConfig thirteen = profile("ports-13.json");
  ASSERT_EQ(six.device.service_ports.size(), 6u);
  ASSERT_EQ(thirteen.device.service_ports.size(), 13u);
  six.campaign.mutation.seed = thirteen.campaign.mutation.seed = 11;
  Outcome a = run(six);
  Outcome b = run(thirteen);
  ASSERT_EQ(a.log.vulnerabilities.size(), 1u);
  ASSERT_EQ(b.log.vulnerabilities.size(), 1u);
  EXPECT_GT(b.log.vulnerabilities[0].packets_before, a.log.vulnerabilities[0].packets_before);
}

TEST(Campaign, ContinueAfterResetResumesAtClosed) {
  RunConfig rc = small(profile("config-dos.json"), 100);
  rc.campaign.continue_after_reset = true;
  Outcome r = run(rc);
  ASSERT_GE(r.log.vulnerabilities.size(), 1u);
  EXPECT_FALSE(r.log.halted);
  EXPECT_EQ(r.log.resets, r.log.vulnerabilities.size());
  std::size_t resets = 0;
  for (std::size_t i = 0; i < r.lines.size(); ++i) {
    if (r.lines[i]["type"] != "reset") continue;
    ++resets;
    EXPECT_EQ(r.lines[i]["state"], "CLOSED");
    // The next transmitted packet leaves from CLOSED.
    for (std::size_t k = i + 1; k < r.lines.size(); ++k) {
      if (r.lines[k]["type"] == "packet") {
        EXPECT_EQ(r.lines[k]["state"], "CLOSED") << r.lines[k].dump();
        break;
      }
    }
  }
  EXPECT_EQ(resets, r.log.resets);
  // States after the bug's job are still fuzzed.
  EXPECT_TRUE(r.log.metrics.states_covered.count(S::Open));
}

TEST(Campaign, PacketCapAborts) {
  RunConfig rc = small(profile("strict.json"), 100);
  rc.campaign.max_packets = 500;
  Outcome r = run(rc);
  EXPECT_EQ(r.log.metrics.transmitted, 500u);
  bool aborted = false;
  for (const auto& s : r.log.states) aborted |= s.status == StateOutcome::Status::Aborted;
  EXPECT_TRUE(aborted);
}

TEST(Scan, PicksFirstFreeNonSdpPort) {
  DeviceProfile p = default_profile();
  p.service_ports = {{0x0001, false}, {0x0011, true}, {0x0019, false}, {0x001B, false}};
  Simulator sim(p);
  LocalTransport t(sim);
  SignalingSession s(t, TransitionTable::builtin());
  ScanReport r = scan_target(s);
  EXPECT_EQ(r.chosen_psm, 0x0019);
  EXPECT_FALSE(r.sdp_fallback);
  EXPECT_EQ(r.probes.size(), 4u);
  EXPECT_EQ(r.info, scan_info(p));
}

TEST(Scan, FallsBackToSdp) {
  DeviceProfile p = default_profile();
  p.service_ports = {{0x0001, false}, {0x0003, true}, {0x0011, true}};
  Simulator sim(p);
  LocalTransport t(sim);
  SignalingSession s(t, TransitionTable::builtin());
  ScanReport r = scan_target(s);
  EXPECT_EQ(r.chosen_psm, kSdpPsm);
  EXPECT_TRUE(r.sdp_fallback);
}

TEST(Scan, NoReachablePort) {
  DeviceProfile p = default_profile();
  p.service_ports = {{0x0003, true}};  // deliberately broken: no SDP
  Simulator sim(p);
  LocalTransport t(sim);
  SignalingSession s(t, TransitionTable::builtin());
  EXPECT_THROW(scan_target(s), NoReachablePortError);
  CampaignConfig cfg;
  EXPECT_THROW(run_campaign(t, TransitionTable::builtin(), cfg), NoReachablePortError);
}

TEST(Scan, RandomProfileRoundTripsThroughLog) {
  std::mt19937_64 g(3);
  for (int i = 0; i < 10; ++i) {
    RunConfig rc = small(profile("strict.json"), 1);
    for (auto& b : rc.device.mac) b = static_cast<std::uint8_t>(g());
    rc.device.oui = static_cast<std::uint32_t>(g() & 0xFFFFFF);
    rc.device.name = "dev-" + std::to_string(g() % 1000);
    rc.campaign.states = StateFilter::parse("Closed");
    Outcome r = run(rc);
    EXPECT_EQ(r.log.scan.info, scan_info(rc.device));
    auto it = std::find_if(r.lines.begin(), r.lines.end(), [](const json& j) { return j["type"] == "scan"; });
    ASSERT_NE(it, r.lines.end());
    const json& scan = *it;
    ASSERT_EQ(scan["type"], "scan");
    EXPECT_EQ(scan["mac"], format_mac(rc.device.mac));
    EXPECT_EQ(scan["name"], rc.device.name);
  }
}

// Fails every send after the first `budget`.
class FlakyTransport final : public Transport {
 public:
  FlakyTransport(Transport& inner, int budget) : inner_(inner), budget_(budget) {}
  DeviceInfo device_info() override { return inner_.device_info(); }
  std::vector<ServicePort> list_ports() override { return inner_.list_ports(); }
  LinkStatus connect(std::uint16_t psm) override { return inner_.connect(psm); }
  void send(ByteView frame) override {
    if (budget_-- <= 0) throw TransportError("link dropped");
    inner_.send(frame);
  }
  ReceiveResult receive(std::chrono::milliseconds t) override { return inner_.receive(t); }
  bool reset_target() override { return inner_.reset_target(); }

 private:
  Transport& inner_;
  int budget_;
};

TEST(Campaign, TransportErrorKeepsPartialLog) {
  Simulator sim(default_profile());
  LocalTransport local(sim);
  FlakyTransport flaky(local, 40);
  CampaignConfig cfg;
  cfg.mutation.packets_per_command = 50;
  MemorySink sink;
  EXPECT_THROW(run_campaign(flaky, TransitionTable::builtin(), cfg, &sink), TransportError);
  std::size_t packets = 0;
  for (const auto& l : sink.lines) packets += json::parse(l)["type"] == "packet";
  EXPECT_GE(packets, 30u);
}

TEST(Replay, ReproducesDos) {
  RunConfig rc = profile("config-dos.json");
  rc.campaign.mutation.seed = 7;
  Outcome r = run(rc);
  std::string line;
  for (const auto& l : r.raw) {
    if (json::parse(l)["type"] == "vulnerability") line = l;
  }
  ASSERT_FALSE(line.empty());
  Simulator sim(rc.device);
  LocalTransport t(sim);
  ReplayResult rep = replay(t, TransitionTable::builtin(), line, rc.campaign);
  EXPECT_TRUE(rep.guide.reached);
  EXPECT_EQ(rep.verdict.severity, Severity::DoS);
  EXPECT_EQ(rep.tx, r.log.vulnerabilities[0].record.wire);
  json out = json::parse(replay_json(rep));
  EXPECT_EQ(out["verdict"]["severity"], "DoS");
}

TEST(Replay, PacketLineOfHealthyExchange) {
  RunConfig rc = small(profile("strict.json"), 5);
  Outcome r = run(rc);
  std::string line;
  for (const auto& l : r.raw) {
    json j = json::parse(l);
    if (j["type"] == "packet" && j["phase"] == "fuzz" && j["state"] == "WAIT_CONFIG") {
      line = l;
      break;
    }
  }
  ASSERT_FALSE(line.empty());
  Simulator sim(rc.device);
  LocalTransport t(sim);
  ReplayResult rep = replay(t, TransitionTable::builtin(), line, rc.campaign);
  EXPECT_TRUE(rep.guide.reached);
  EXPECT_EQ(rep.verdict.severity, Severity::None);
  EXPECT_EQ(to_hex(rep.tx), json::parse(line)["tx"].get<std::string>());
}

TEST(Replay, BadInput) {
  Simulator sim(default_profile());
  LocalTransport t(sim);
  CampaignConfig cfg;
  EXPECT_THROW(replay(t, TransitionTable::builtin(), "nope", cfg), ConfigError);
  EXPECT_THROW(replay(t, TransitionTable::builtin(), R"({"state":"NOWHERE","tx":"00"})", cfg),
               ConfigError);
  EXPECT_THROW(replay(t, TransitionTable::builtin(), R"({"state":"OPEN"})", cfg), ConfigError);
}

TEST(Filter, ParsesJobsStatesAndExclusions) {
  StateFilter all = StateFilter::parse("");
  for (S s : kAllStates) EXPECT_TRUE(all.allows(s));
  StateFilter f = StateFilter::parse("Configuration,!WAIT_CONFIG_RSP");
  EXPECT_TRUE(f.allows(S::WaitConfig));
  EXPECT_FALSE(f.allows(S::WaitConfigRsp));
  EXPECT_FALSE(f.allows(S::Open));
  StateFilter g = StateFilter::parse("!Move");
  EXPECT_TRUE(g.allows(S::Closed));
  EXPECT_FALSE(g.allows(S::WaitMoveConfirm));
  EXPECT_THROW(StateFilter::parse("Nowhere"), ConfigError);
}

TEST(Order, JobMajorStateOrder) {
  auto order = campaign_state_order();
  ASSERT_EQ(order.size(), kStateCount);
  EXPECT_EQ(order.front(), S::Closed);
  std::set<S> unique(order.begin(), order.end());
  EXPECT_EQ(unique.size(), kStateCount);
  for (std::size_t i = 1; i < order.size(); ++i) {
    EXPECT_LE(static_cast<int>(job_of(order[i - 1])), static_cast<int>(job_of(order[i])));
  }
}

}  // namespace
}  // namespace sigfuzz
