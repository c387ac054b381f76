#include "sigfuzz/state_engine.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <sstream>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

// Generated from data/transitions.tsv at build time.
extern const char* const kBuiltinTransitionTable;

const std::array<L2capState, kStateCount> kAllStates = {
    L2capState::Closed,          L2capState::WaitConnect,      L2capState::WaitConnectRsp,
    L2capState::WaitCreate,      L2capState::WaitCreateRsp,    L2capState::WaitConfig,
    L2capState::WaitConfigRsp,   L2capState::WaitConfigReq,    L2capState::WaitConfigReqRsp,
    L2capState::WaitSendConfig,  L2capState::WaitIndFinalRsp,  L2capState::WaitFinalRsp,
    L2capState::WaitControlInd,  L2capState::WaitDisconnect,   L2capState::WaitMove,
    L2capState::WaitMoveRsp,     L2capState::WaitMoveConfirm,  L2capState::WaitConfirmRsp,
    L2capState::Open,
};

const std::array<Job, kJobCount> kAllJobs = {Job::Closed,        Job::Connection, Job::Creation,
                                             Job::Configuration, Job::Disconnection, Job::Move,
                                             Job::Open};

namespace {

constexpr std::array<std::string_view, kStateCount> kStateNames = {
    "CLOSED",           "WAIT_CONNECT",     "WAIT_CONNECT_RSP",   "WAIT_CREATE",
    "WAIT_CREATE_RSP",  "WAIT_CONFIG",      "WAIT_CONFIG_RSP",    "WAIT_CONFIG_REQ",
    "WAIT_CONFIG_REQ_RSP", "WAIT_SEND_CONFIG", "WAIT_IND_FINAL_RSP", "WAIT_FINAL_RSP",
    "WAIT_CONTROL_IND", "WAIT_DISCONNECT",  "WAIT_MOVE",          "WAIT_MOVE_RSP",
    "WAIT_MOVE_CONFIRM", "WAIT_CONFIRM_RSP", "OPEN",
};

constexpr std::array<std::string_view, kJobCount> kJobNames = {
    "Closed", "Connection", "Creation", "Configuration", "Disconnection", "Move", "Open"};

std::string upper(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == ' ' || c == '-') c = '_';
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

std::size_t index(L2capState s, CommandKind e) {
  return static_cast<std::size_t>(s) * kCommandCount + command_index(e);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string_view state_name(L2capState s) { return kStateNames[static_cast<std::size_t>(s)]; }

std::optional<L2capState> parse_state(std::string_view name) {
  std::string want = upper(name);
  for (std::size_t i = 0; i < kStateNames.size(); ++i) {
    if (kStateNames[i] == want) return static_cast<L2capState>(i);
  }
  return std::nullopt;
}

std::string_view job_name(Job j) { return kJobNames[static_cast<std::size_t>(j)]; }

std::optional<Job> parse_job(std::string_view name) {
  std::string want = upper(name);
  for (std::size_t i = 0; i < kJobNames.size(); ++i) {
    if (upper(kJobNames[i]) == want) return static_cast<Job>(i);
  }
  return std::nullopt;
}

Job job_of(L2capState s) {
  switch (s) {
    case L2capState::Closed: return Job::Closed;
    case L2capState::WaitConnect:
    case L2capState::WaitConnectRsp: return Job::Connection;
    case L2capState::WaitCreate:
    case L2capState::WaitCreateRsp: return Job::Creation;
    case L2capState::WaitConfig:
    case L2capState::WaitConfigRsp:
    case L2capState::WaitConfigReq:
    case L2capState::WaitConfigReqRsp:
    case L2capState::WaitSendConfig:
    case L2capState::WaitIndFinalRsp:
    case L2capState::WaitFinalRsp:
    case L2capState::WaitControlInd: return Job::Configuration;
    case L2capState::WaitDisconnect: return Job::Disconnection;
    case L2capState::WaitMove:
    case L2capState::WaitMoveRsp:
    case L2capState::WaitMoveConfirm:
    case L2capState::WaitConfirmRsp: return Job::Move;
    case L2capState::Open: return Job::Open;
  }
  return Job::Closed;
}

std::vector<L2capState> states_of(Job j) {
  std::vector<L2capState> out;
  for (L2capState s : kAllStates) {
    if (job_of(s) == j) out.push_back(s);
  }
  return out;
}

std::vector<CommandKind> valid_commands(Job j) {
  using C = CommandKind;
  switch (j) {
    case Job::Closed:
    case Job::Open: return {kAllCommands.begin(), kAllCommands.end()};
    case Job::Connection: return {C::ConnectReq, C::ConnectRsp};
    case Job::Creation: return {C::CreateChannelReq, C::CreateChannelRsp};
    case Job::Configuration: return {C::ConfigReq, C::ConfigRsp};
    case Job::Disconnection: return {C::DisconnectReq, C::DisconnectRsp};
    case Job::Move:
      return {C::MoveChannelReq, C::MoveChannelRsp, C::MoveChannelConfirmReq,
              C::MoveChannelConfirmRsp};
  }
  return {};
}

std::string Action::to_string() const {
  switch (type) {
    case Type::Reject: return "Reject";
    case Type::Silent: return "Silent";
    case Type::Respond: return std::string(command_name(response));
  }
  return "?";
}

TransitionTable TransitionTable::parse(std::string_view text) {
  TransitionTable t;
  std::array<bool, kStateCount * kCommandCount> seen{};
  for (L2capState s : kAllStates) {
    for (CommandKind e : kAllCommands) t.rules_[index(s, e)] = {s, e, Action::reject(), {}};
  }

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto cols = split_fields(line);
    if (cols.empty()) continue;
    auto fail = [&](const std::string& msg) {
      throw ConfigError("transition table line " + std::to_string(line_no) + ": " + msg);
    };
    if (cols[0] == "peer-initiated") {
      if (cols.size() != 2) fail("expected `peer-initiated STATE`");
      auto s = parse_state(cols[1]);
      if (!s) fail("unknown state " + std::string(cols[1]));
      t.peer_[static_cast<std::size_t>(*s)] = true;
      continue;
    }
    if (cols.size() != 4) fail("expected 4 columns, got " + std::to_string(cols.size()));
    auto s = parse_state(cols[0]);
    if (!s) fail("unknown state " + std::string(cols[0]));
    auto e = parse_command(cols[1]);
    if (!e) fail("unknown event " + std::string(cols[1]));
    Action a;
    if (cols[2] == "Reject") {
      a = Action::reject();
    } else if (cols[2] == "Silent") {
      a = Action::silent();
    } else if (auto r = parse_command(cols[2])) {
      a = Action::respond(*r);
    } else {
      fail("unknown action " + std::string(cols[2]));
    }
    std::optional<L2capState> next;
    if (cols[3] != "-") {
      next = parse_state(cols[3]);
      if (!next) fail("unknown next state " + std::string(cols[3]));
    }
    if (a.type == Action::Type::Reject && next) fail("Reject rows cannot change state");
    std::size_t i = index(*s, *e);
    if (seen[i]) fail("duplicate row for " + std::string(cols[0]) + " " + std::string(cols[1]));
    seen[i] = true;
    t.rules_[i] = {*s, *e, a, next};
  }
  return t;
}

TransitionTable TransitionTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read transition table " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const TransitionTable& TransitionTable::builtin() {
  static const TransitionTable table = parse(kBuiltinTransitionTable);
  return table;
}

const TransitionRule& TransitionTable::rule(L2capState s, CommandKind e) const {
  return rules_[index(s, e)];
}

TransitionRule TransitionTable::rule(L2capState s, CommandKind e, Strictness strictness) const {
  TransitionRule r = rule(s, e);
  if (strictness == Strictness::Lenient && r.action.type == Action::Type::Reject) {
    Job j = job_of(s);
    if (j != Job::Closed && j != Job::Open) {
      auto valid = valid_commands(j);
      if (std::find(valid.begin(), valid.end(), e) != valid.end()) r.action = Action::silent();
    }
  }
  return r;
}

bool TransitionTable::peer_initiated(L2capState s) const {
  return peer_[static_cast<std::size_t>(s)];
}

std::optional<std::vector<TransitionRule>> TransitionTable::shortest_path(L2capState from,
                                                                          L2capState to) const {
  if (from == to) return std::vector<TransitionRule>{};
  std::array<std::optional<TransitionRule>, kStateCount> via{};
  std::array<bool, kStateCount> visited{};
  visited[static_cast<std::size_t>(from)] = true;
  std::deque<L2capState> queue{from};
  while (!queue.empty()) {
    L2capState cur = queue.front();
    queue.pop_front();
    for (CommandKind e : kAllCommands) {
      const TransitionRule& r = rule(cur, e);
      if (r.action.type == Action::Type::Reject || !r.next) continue;
      std::size_t n = static_cast<std::size_t>(*r.next);
      if (visited[n]) continue;
      visited[n] = true;
      via[n] = r;
      if (*r.next == to) {
        std::vector<TransitionRule> path;
        for (L2capState s = to; s != from; s = via[static_cast<std::size_t>(s)]->current) {
          path.push_back(*via[static_cast<std::size_t>(s)]);
        }
        std::reverse(path.begin(), path.end());
        return path;
      }
      queue.push_back(*r.next);
    }
  }
  return std::nullopt;
}

std::vector<L2capState> TransitionTable::reachable_from(L2capState from) const {
  std::vector<L2capState> out;
  for (L2capState s : kAllStates) {
    if (shortest_path(from, s)) out.push_back(s);
  }
  return out;
}

std::string TransitionTable::dump() const {
  std::string out;
  for (L2capState s : kAllStates) {
    if (peer_initiated(s)) out += "peer-initiated\t" + std::string(state_name(s)) + "\n";
  }
  for (const auto& r : rules_) {
    out += std::string(state_name(r.current)) + "\t" + std::string(command_name(r.event)) + "\t" +
           r.action.to_string() + "\t" + (r.next ? std::string(state_name(*r.next)) : "-") + "\n";
  }
  return out;
}

std::pair<Action, std::optional<L2capState>> step(L2capState current, CommandKind event) {
  const auto& r = TransitionTable::builtin().rule(current, event);
  return {r.action, r.next};
}

}  // namespace sigfuzz
