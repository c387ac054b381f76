#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sigfuzz/detector.hpp"
#include "sigfuzz/metrics.hpp"
#include "sigfuzz/mutation.hpp"
#include "sigfuzz/session.hpp"
#include "sigfuzz/state_engine.hpp"
#include "sigfuzz/transport.hpp"

namespace sigfuzz {

// Which target states a campaign visits. Tokens are state or job names,
// comma separated; a leading '!' excludes. "Closed,Configuration",
// "!Move", "WAIT_CONFIG,OPEN".
class StateFilter {
 public:
  static StateFilter parse(std::string_view text);  // throws ConfigError
  bool allows(L2capState s) const;
  const std::string& text() const { return text_; }

 private:
  std::string text_;
  std::vector<L2capState> include_;
  std::vector<L2capState> exclude_;
};

enum class MalformedRule : std::uint8_t { EveryOutput, ChangedBytes };
std::string_view malformed_rule_name(MalformedRule r);

struct CampaignConfig {
  MutationConfig mutation;
  MutationMode mode = MutationMode::CoreField;
  bool continue_after_reset = false;
  StateFilter states;
  std::chrono::milliseconds step_timeout{1000};
  MalformedRule malformed_rule = MalformedRule::EveryOutput;
  std::filesystem::path dump_dir;  // watched for crash dumps; empty disables
  std::uint64_t max_packets = 0;   // 0 = no cap

  void validate() const;  // throws ConfigError
};

struct PortProbe {
  std::uint16_t psm = 0;
  bool requires_pairing = false;
  LinkStatus result = LinkStatus::Ok;
};

struct ScanReport {
  DeviceInfo info;
  std::vector<ServicePort> ports;
  std::vector<PortProbe> probes;
  std::uint16_t chosen_psm = kSdpPsm;
  bool sdp_fallback = false;
};

struct Vulnerability {
  L2capState state = L2capState::Closed;
  MutationRecord record;
  FuzzVerdict verdict;
  std::uint64_t packets_before = 0;  // transmitted before the trigger
  double elapsed_seconds = 0.0;
};

struct StateOutcome {
  enum class Status : std::uint8_t { Filtered, PeerInitiated, Unreachable, Tested, Aborted };
  L2capState state = L2capState::Closed;
  Status status = Status::Filtered;
  std::uint64_t packets_fuzzed = 0;
  std::uint64_t reguides = 0;
  std::string detail;
};

std::string_view state_outcome_name(StateOutcome::Status s);

struct CampaignLog {
  ScanReport scan;
  std::vector<StateOutcome> states;
  std::vector<Vulnerability> vulnerabilities;
  CampaignMetrics metrics;
  bool halted = false;
  std::uint64_t resets = 0;
  double elapsed_seconds = 0.0;
};

// Receives one JSON document per line.
class JsonlSink {
 public:
  virtual ~JsonlSink() = default;
  virtual void line(const std::string& text) = 0;
};

class StreamSink final : public JsonlSink {
 public:
  explicit StreamSink(std::ostream& out) : out_(out) {}
  void line(const std::string& text) override { out_ << text << '\n'; }

 private:
  std::ostream& out_;
};

class MemorySink final : public JsonlSink {
 public:
  void line(const std::string& text) override { lines.push_back(text); }
  std::vector<std::string> lines;
};

// Job table order, then state order within each job.
std::vector<L2capState> campaign_state_order();

// Meta-information and port probing; picks the first pairing-free port other
// than SDP, falling back to SDP. Throws NoReachablePortError.
ScanReport scan_target(SignalingSession& session);

// Scan, then guide / mutate / detect for every allowed state.
// Throws TransportError (the sink keeps the partial log).
CampaignLog run_campaign(Transport& transport, const TransitionTable& table,
                         const CampaignConfig& config, JsonlSink* sink = nullptr);

// JSON summary of a finished campaign (includes wall-clock figures).
std::string summary_json(const CampaignLog& log, const CampaignConfig& config);
std::string scan_json(const ScanReport& scan);
std::string record_json(const MutationRecord& rec);
std::string verdict_json(const FuzzVerdict& v);

struct ReplayResult {
  GuideResult guide;
  ReceiveResult rx;
  FuzzVerdict verdict;
  L2capState state = L2capState::Closed;
  Bytes tx;
};

// Re-sends a logged packet: accepts a fuzz "packet" line or a "vulnerability"
// line. Guides to the logged state first.
ReplayResult replay(Transport& transport, const TransitionTable& table, const std::string& log_line,
                    const CampaignConfig& config);
std::string replay_json(const ReplayResult& r);

}  // namespace sigfuzz
