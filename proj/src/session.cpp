#include "sigfuzz/session.hpp"

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Scan: return "scan";
    case Phase::Guide: return "guide";
    case Phase::Fuzz: return "fuzz";
    case Phase::Ping: return "ping";
    case Phase::Probe: return "probe";
    case Phase::Replay: return "replay";
  }
  return "?";
}

SignalingSession::SignalingSession(Transport& transport, const TransitionTable& table,
                                   std::chrono::milliseconds step_timeout)
    : transport_(transport), table_(table), step_timeout_(step_timeout) {}

std::uint8_t SignalingSession::next_identifier() {
  last_id_ = last_id_ == 0xFF ? 0x01 : static_cast<std::uint8_t>(last_id_ + 1);
  return last_id_;
}

L2capPacket SignalingSession::normal_packet(CommandKind k) {
  using F = FieldName;
  L2capPacket p = default_packet(k, next_identifier());
  const ChannelContext& c = context_;
  auto set_if = [&](F f, std::uint16_t v) {
    if (p.find(f)) p.set(f, v);
  };
  switch (k) {
    case CommandKind::ConnectReq:
    case CommandKind::CreateChannelReq:
      set_if(F::Psm, c.psm);
      set_if(F::Scid, c.local_cid);
      break;
    case CommandKind::ConnectRsp:
    case CommandKind::CreateChannelRsp:
    case CommandKind::DisconnectRsp:
      set_if(F::Dcid, c.local_cid);
      set_if(F::Scid, c.remote_cid);
      break;
    case CommandKind::ConfigReq: set_if(F::Dcid, c.remote_cid); break;
    case CommandKind::ConfigRsp: set_if(F::Scid, c.remote_cid); break;
    case CommandKind::DisconnectReq:
      set_if(F::Dcid, c.remote_cid);
      set_if(F::Scid, c.local_cid);
      break;
    case CommandKind::MoveChannelReq:
    case CommandKind::MoveChannelConfirmReq: set_if(F::Icid, c.local_cid); break;
    case CommandKind::MoveChannelRsp:
    case CommandKind::MoveChannelConfirmRsp: set_if(F::Icid, c.remote_cid); break;
    default: break;
  }
  return p;
}

ReceiveResult SignalingSession::exchange(ByteView tx, Phase phase, bool malformed,
                                         const MutationRecord* record) {
  transport_.send(tx);
  ReceiveResult rx = transport_.receive(step_timeout_);
  if (observer_) {
    ExchangeRecord ev;
    ev.phase = phase;
    ev.state = state_;
    ev.tx.assign(tx.begin(), tx.end());
    ev.malformed = malformed;
    ev.rx = rx;
    ev.record = record;
    observer_(ev);
  }
  return rx;
}

PingResult SignalingSession::ping() {
  PingResult r = transport_.ping(next_identifier(), step_timeout_);
  if (observer_) {
    ExchangeRecord ev;
    ev.phase = Phase::Ping;
    ev.state = state_;
    ev.tx = r.sent;
    ev.rx = r.reply;
    observer_(ev);
  }
  return r;
}

LinkStatus SignalingSession::probe(std::uint16_t psm, Phase phase) {
  LinkStatus s = transport_.connect(psm);
  if (observer_) {
    ExchangeRecord ev;
    ev.phase = phase;
    ev.state = state_;
    ev.psm = psm;
    ev.rx.status = s;
    observer_(ev);
  }
  return s;
}

bool response_ok(const L2capPacket& rsp) {
  auto result = rsp.value_of(FieldName::Result);
  if (!result) return true;
  if (rsp.code == command_code(CommandKind::ConfigRsp)) return *result == 0x0000 || *result == 0x0004;
  return *result == 0x0000 || *result == 0x0001;
}

namespace {

std::optional<L2capPacket> try_decode(const ReceiveResult& rx) {
  if (rx.status != LinkStatus::Ok) return std::nullopt;
  try {
    return decode(rx.frame);
  } catch (const Error&) {
    return std::nullopt;
  }
}

// Did the reply confirm the rule's action?
bool confirms(const TransitionRule& rule, const ReceiveResult& rx) {
  switch (rule.action.type) {
    case Action::Type::Silent: return rx.status == LinkStatus::Timeout;
    case Action::Type::Respond: {
      auto rsp = try_decode(rx);
      return rsp && rsp->code == command_code(rule.action.response) && response_ok(*rsp);
    }
    case Action::Type::Reject: return false;
  }
  return false;
}

}  // namespace

bool SignalingSession::track(CommandKind sent, const ReceiveResult& rx) {
  const TransitionRule& rule = table_.rule(state_, sent);
  if (!rule.next || !confirms(rule, rx)) return false;
  state_ = *rule.next;
  return true;
}

void SignalingSession::learn(const ReceiveResult& rx) {
  auto rsp = try_decode(rx);
  if (!rsp) return;
  if (rsp->code == command_code(CommandKind::ConnectRsp) ||
      rsp->code == command_code(CommandKind::CreateChannelRsp)) {
    auto dcid = rsp->value_of(FieldName::Dcid);
    auto scid = rsp->value_of(FieldName::Scid);
    if (dcid && scid && *scid == context_.local_cid && *dcid != 0 && response_ok(*rsp)) {
      context_.remote_cid = *dcid;
    }
  }
}

GuideResult guide_to(L2capState target, SignalingSession& session) {
  GuideResult g;
  g.state = session.state();
  if (session.state() == target) {
    g.reached = true;
    return g;
  }
  const TransitionTable& table = session.table();
  if (table.peer_initiated(target)) {
    g.detail = std::string(state_name(target)) + " is only entered when the target initiates";
    return g;
  }
  auto path = table.shortest_path(session.state(), target);
  if (!path) {
    g.detail = "no transition path from " + std::string(state_name(session.state()));
    return g;
  }
  for (const TransitionRule& rule : *path) {
    L2capPacket pkt = session.normal_packet(rule.event);
    ReceiveResult rx = session.exchange(encode(pkt), Phase::Guide);
    g.path.push_back(rule.event);
    if (rx.status == LinkStatus::Ok) {
      g.last_response = rx.frame;
      session.learn(rx);
    }
    if (!confirms(rule, rx)) {
      g.state = session.state();
      g.detail = std::string(command_name(rule.event)) + " in " +
                 std::string(state_name(rule.current)) + " expected " + rule.action.to_string() +
                 ", got " +
                 (rx.status == LinkStatus::Ok ? to_hex(rx.frame)
                                              : std::string(link_status_name(rx.status)));
      return g;
    }
    session.set_state(*rule.next);
  }
  g.reached = true;
  g.state = session.state();
  return g;
}

}  // namespace sigfuzz
