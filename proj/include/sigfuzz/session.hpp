#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sigfuzz/codec.hpp"
#include "sigfuzz/mutation.hpp"
#include "sigfuzz/state_engine.hpp"
#include "sigfuzz/transport.hpp"

namespace sigfuzz {

enum class Phase : std::uint8_t { Scan, Guide, Fuzz, Ping, Probe, Replay };
std::string_view phase_name(Phase p);

// One transmitted packet (or connection probe) and what came back.
struct ExchangeRecord {
  Phase phase = Phase::Guide;
  L2capState state = L2capState::Closed;  // tracked state at send time
  Bytes tx;                               // empty for probes
  std::optional<std::uint16_t> psm;       // probes only
  bool malformed = false;
  ReceiveResult rx;
  const MutationRecord* record = nullptr;  // fuzz only
};

struct ChannelContext {
  std::uint16_t psm = kSdpPsm;
  std::uint16_t local_cid = kDefaultCid;   // our endpoint
  std::uint16_t remote_cid = kDefaultCid;  // the target's endpoint, learned from responses
};

// Host side of one signaling conversation: identifier counter, tracked
// protocol state, and the single point every packet goes through.
class SignalingSession {
 public:
  using Observer = std::function<void(const ExchangeRecord&)>;

  SignalingSession(Transport& transport, const TransitionTable& table,
                   std::chrono::milliseconds step_timeout = std::chrono::milliseconds(1000));

  Transport& transport() { return transport_; }
  const TransitionTable& table() const { return table_; }
  std::chrono::milliseconds step_timeout() const { return step_timeout_; }

  L2capState state() const { return state_; }
  void set_state(L2capState s) { state_ = s; }
  ChannelContext& context() { return context_; }
  const ChannelContext& context() const { return context_; }
  void set_observer(Observer obs) { observer_ = std::move(obs); }

  // Wraps 0x01..0xFF.
  std::uint8_t next_identifier();
  // A well-formed packet of kind k addressed with the session's channel context.
  L2capPacket normal_packet(CommandKind k);

  ReceiveResult exchange(ByteView tx, Phase phase, bool malformed = false,
                         const MutationRecord* record = nullptr);
  PingResult ping();
  LinkStatus probe(std::uint16_t psm, Phase phase);

  // Updates the tracked state from the rule for `sent` and the observed reply.
  // Returns true when the tracked state changed.
  bool track(CommandKind sent, const ReceiveResult& rx);
  // Picks up the target's channel id from connection responses.
  void learn(const ReceiveResult& rx);

 private:
  Transport& transport_;
  const TransitionTable& table_;
  std::chrono::milliseconds step_timeout_;
  L2capState state_ = L2capState::Closed;
  ChannelContext context_;
  std::uint8_t last_id_ = 0;
  Observer observer_;
};

// True when a response carries a success or pending result (or no result).
bool response_ok(const L2capPacket& rsp);

struct GuideResult {
  bool reached = false;
  L2capState state = L2capState::Closed;  // where the session is now
  std::vector<CommandKind> path;           // events sent, a prefix when unreachable
  std::optional<Bytes> last_response;
  std::string detail;
};

GuideResult guide_to(L2capState target, SignalingSession& session);

}  // namespace sigfuzz
