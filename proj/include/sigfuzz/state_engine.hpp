#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sigfuzz/codec.hpp"

namespace sigfuzz {

enum class L2capState : std::uint8_t {
  Closed,
  WaitConnect,
  WaitConnectRsp,
  WaitCreate,
  WaitCreateRsp,
  WaitConfig,
  WaitConfigRsp,
  WaitConfigReq,
  WaitConfigReqRsp,
  WaitSendConfig,
  WaitIndFinalRsp,
  WaitFinalRsp,
  WaitControlInd,
  WaitDisconnect,
  WaitMove,
  WaitMoveRsp,
  WaitMoveConfirm,
  WaitConfirmRsp,
  Open,
};

inline constexpr std::size_t kStateCount = 19;
extern const std::array<L2capState, kStateCount> kAllStates;

std::string_view state_name(L2capState s);
std::optional<L2capState> parse_state(std::string_view name);

enum class Job : std::uint8_t { Closed, Connection, Creation, Configuration, Disconnection, Move, Open };

inline constexpr std::size_t kJobCount = 7;
extern const std::array<Job, kJobCount> kAllJobs;

std::string_view job_name(Job j);
std::optional<Job> parse_job(std::string_view name);
Job job_of(L2capState s);
std::vector<L2capState> states_of(Job j);
// Closed and Open map to every command, CommandReject included.
std::vector<CommandKind> valid_commands(Job j);

struct Action {
  enum class Type : std::uint8_t { Respond, Reject, Silent };
  Type type = Type::Reject;
  CommandKind response = CommandKind::CommandReject;  // Respond only

  static Action respond(CommandKind k) { return {Type::Respond, k}; }
  static Action reject() { return {Type::Reject, CommandKind::CommandReject}; }
  static Action silent() { return {Type::Silent, CommandKind::CommandReject}; }

  std::string to_string() const;
  bool operator==(const Action&) const = default;
};

struct TransitionRule {
  L2capState current{};
  CommandKind event{};
  Action action;
  std::optional<L2capState> next;

  bool operator==(const TransitionRule&) const = default;
};

enum class Strictness : std::uint8_t { Strict, Lenient };

class TransitionTable {
 public:
  // Parses the tab separated table format; throws ConfigError with line numbers.
  static TransitionTable parse(std::string_view text);
  static TransitionTable load(const std::filesystem::path& path);
  // The table compiled into the library.
  static const TransitionTable& builtin();

  const TransitionRule& rule(L2capState s, CommandKind e) const;
  // Lenient devices answer job-valid events silently instead of rejecting them
  // (outside the Closed and Open jobs).
  TransitionRule rule(L2capState s, CommandKind e, Strictness strictness) const;
  bool peer_initiated(L2capState s) const;

  // Shortest event sequence over non-reject edges that change state.
  // Empty when from == to; nullopt when unreachable.
  std::optional<std::vector<TransitionRule>> shortest_path(L2capState from, L2capState to) const;
  std::vector<L2capState> reachable_from(L2capState from) const;

  // All 323 rows in table order, same format as the data file.
  std::string dump() const;

 private:
  std::array<TransitionRule, kStateCount * kCommandCount> rules_{};
  std::array<bool, kStateCount> peer_{};
};

// (action, next) for the builtin table.
std::pair<Action, std::optional<L2capState>> step(L2capState current, CommandKind event);

}  // namespace sigfuzz
