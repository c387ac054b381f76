#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sigfuzz/codec.hpp"
#include "sigfuzz/state_engine.hpp"
#include "sigfuzz/transport.hpp"

namespace sigfuzz {

// Conjunction of `FIELD op value` clauses, e.g. "DCID != 0x0040 && garbage_len > 0".
// FIELD is any packet field name (underscores for spaces) or garbage_len.
// A clause over a field the packet does not carry is false.
class FieldPredicate {
 public:
  enum class Op : std::uint8_t { Eq, Ne, Lt, Le, Gt, Ge };
  struct Clause {
    bool garbage_len = false;
    FieldName field{};
    Op op = Op::Eq;
    std::uint32_t value = 0;
  };

  FieldPredicate() = default;
  // Throws ConfigError. "" and "true" match every packet.
  static FieldPredicate parse(std::string_view text);

  bool matches(const L2capPacket& p) const;
  const std::string& text() const { return text_; }
  const std::vector<Clause>& clauses() const { return clauses_; }

 private:
  std::string text_;
  std::vector<Clause> clauses_;
};

enum class SymptomKind : std::uint8_t { DoS, Crash };
// How a crashed device looks from the host.
enum class CrashSignal : std::uint8_t { Reset, Aborted, Refused, Timeout };

std::string_view symptom_name(SymptomKind s);
std::optional<SymptomKind> parse_symptom(std::string_view s);
std::string_view crash_signal_name(CrashSignal s);
std::optional<CrashSignal> parse_crash_signal(std::string_view s);

struct BugProfile {
  std::string label;
  Job trigger_job = Job::Closed;
  CommandKind trigger_command = CommandKind::ConnectReq;
  FieldPredicate predicate;
  SymptomKind symptom = SymptomKind::DoS;
  CrashSignal crash_signal = CrashSignal::Reset;
};

struct DeviceProfile {
  std::array<std::uint8_t, 6> mac{};
  std::string name;
  std::string device_class = "smartphone";
  std::uint32_t oui = 0;
  std::vector<ServicePort> service_ports{{kSdpPsm, false}};
  Strictness strictness = Strictness::Strict;
  std::size_t mtu = 672;
  std::size_t max_channels = 8;
  bool create_channel = true;
  bool move_channel = true;
  std::vector<BugProfile> bugs;

  // Throws ConfigError; requires a pairing-free SDP port.
  void validate() const;
};

// A bug-free strict phone with SDP plus a few common ports.
DeviceProfile default_profile();

DeviceInfo scan_info(const DeviceProfile& profile);
std::vector<ServicePort> list_ports(const DeviceProfile& profile);

struct Symptom {
  SymptomKind kind = SymptomKind::DoS;
  CrashSignal signal = CrashSignal::Reset;
  std::string bug_label;
};

struct HandleResult {
  enum class Kind : std::uint8_t { Response, Silence, Death };
  Kind kind = Kind::Silence;
  Bytes frame;
};

struct Channel {
  std::uint16_t local_cid = 0;   // the device's endpoint
  std::uint16_t remote_cid = 0;  // the peer's endpoint
  std::uint16_t psm = 0;
};

// Device side of the signaling channel. Single threaded; owned by one transport.
class Simulator {
 public:
  // An empty dump_dir selects <tmp>/sigfuzz-dumps.
  explicit Simulator(DeviceProfile profile,
                     const TransitionTable& table = TransitionTable::builtin(),
                     std::filesystem::path dump_dir = {});

  HandleResult handle(ByteView frame);
  // Connection attempt to a service port.
  LinkStatus probe(std::uint16_t psm) const;
  // What a receive observes while the device is down.
  LinkStatus dead_receive_status() const;

  void reset();
  // Test hook: put the machine in `s` with one channel (CIDs 0x0040 both ends).
  void force_state(L2capState s);

  L2capState state() const { return state_; }
  bool dead() const { return symptom_.has_value(); }
  const std::optional<Symptom>& symptom() const { return symptom_; }
  const std::vector<std::filesystem::path>& dumps() const { return dumps_; }
  const std::vector<Channel>& channels() const { return channels_; }
  const DeviceProfile& profile() const { return profile_; }
  const std::filesystem::path& dump_dir() const { return dump_dir_; }

 private:
  HandleResult reject(std::uint8_t id, std::uint16_t reason, std::uint16_t scid = 0,
                      std::uint16_t dcid = 0) const;
  HandleResult respond(const L2capPacket& p) const;
  std::optional<std::pair<std::uint16_t, std::uint16_t>> bad_cids(CommandKind k,
                                                                  const L2capPacket& p) const;
  HandleResult apply(const TransitionRule& rule, const L2capPacket& p);
  void enter(std::optional<L2capState> next);
  std::optional<std::uint16_t> allocate_cid() const;
  Channel* by_local(std::uint16_t cid);
  Channel* by_remote(std::uint16_t cid);
  const ServicePort* port(std::uint16_t psm) const;
  void trigger(const BugProfile& bug, const L2capPacket& p);
  std::uint8_t next_own_id();

  DeviceProfile profile_;
  const TransitionTable* table_;
  std::filesystem::path dump_dir_;
  L2capState state_ = L2capState::Closed;
  std::vector<Channel> channels_;
  std::optional<Symptom> symptom_;
  std::vector<std::filesystem::path> dumps_;
  std::uint8_t own_id_ = 0;
  std::uint64_t dump_counter_ = 0;
};

// In-process transport over a Simulator.
class LocalTransport final : public Transport {
 public:
  explicit LocalTransport(Simulator& sim) : sim_(sim) {}

  DeviceInfo device_info() override;
  std::vector<ServicePort> list_ports() override;
  LinkStatus connect(std::uint16_t psm) override;
  void send(ByteView frame) override;
  ReceiveResult receive(std::chrono::milliseconds timeout) override;
  bool reset_target() override;

  Simulator& simulator() { return sim_; }

 private:
  Simulator& sim_;
  std::deque<Bytes> inbox_;
};

}  // namespace sigfuzz
