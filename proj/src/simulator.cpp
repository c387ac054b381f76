#include "sigfuzz/simulator.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

namespace {

bool in_cid_range(std::optional<std::uint16_t> v) { return v && *v >= kDefaultCid; }

std::string lower(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

std::string hex16(std::uint16_t v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%04X", v);
  return buf;
}

std::string utc_stamp() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

}  // namespace

// ---- predicates ------------------------------------------------------------

FieldPredicate FieldPredicate::parse(std::string_view text) {
  FieldPredicate pred;
  pred.text_ = std::string(text);
  std::size_t i = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError("predicate \"" + std::string(text) + "\": " + msg);
  };
  auto skip_ws = [&] {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  };
  auto word = [&] {
    std::size_t start = i;
    while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_')) {
      ++i;
    }
    return text.substr(start, i - start);
  };

  skip_ws();
  if (i == text.size()) return pred;
  {
    std::size_t save = i;
    std::string w = lower(word());
    skip_ws();
    if (w == "true" && i == text.size()) return pred;
    i = save;
  }

  while (true) {
    skip_ws();
    std::string_view lhs = word();
    if (lhs.empty()) fail("expected a field name at offset " + std::to_string(i));
    Clause c;
    std::string l = lower(lhs);
    if (l == "garbage_len" || l == "garbage") {
      c.garbage_len = true;
    } else if (auto f = parse_field(lhs)) {
      c.field = *f;
    } else {
      fail("unknown field " + std::string(lhs));
    }
    skip_ws();
    static constexpr std::pair<std::string_view, Op> kOps[] = {
        {"==", Op::Eq}, {"!=", Op::Ne}, {"<=", Op::Le}, {">=", Op::Ge}, {"<", Op::Lt}, {">", Op::Gt}};
    bool found = false;
    for (const auto& [tok, op] : kOps) {
      if (text.substr(i, tok.size()) == tok) {
        c.op = op;
        i += tok.size();
        found = true;
        break;
      }
    }
    if (!found) fail("expected a comparison operator at offset " + std::to_string(i));
    skip_ws();
    std::string_view num = word();
    if (num.empty()) fail("expected a number at offset " + std::to_string(i));
    try {
      std::size_t used = 0;
      c.value = static_cast<std::uint32_t>(std::stoul(std::string(num), &used, 0));
      if (used != num.size()) fail("bad number " + std::string(num));
    } catch (const std::logic_error&) {
      fail("bad number " + std::string(num));
    }
    pred.clauses_.push_back(c);
    skip_ws();
    if (i == text.size()) break;
    if (text.substr(i, 2) == "&&") {
      i += 2;
      continue;
    }
    std::string w = lower(word());
    if (w != "and") fail("expected && or AND at offset " + std::to_string(i));
  }
  return pred;
}

bool FieldPredicate::matches(const L2capPacket& p) const {
  for (const auto& c : clauses_) {
    std::uint32_t lhs = 0;
    if (c.garbage_len) {
      lhs = static_cast<std::uint32_t>(p.garbage_tail.size());
    } else if (auto v = p.value_of(c.field)) {
      lhs = *v;
    } else {
      return false;
    }
    bool ok = false;
    switch (c.op) {
      case Op::Eq: ok = lhs == c.value; break;
      case Op::Ne: ok = lhs != c.value; break;
      case Op::Lt: ok = lhs < c.value; break;
      case Op::Le: ok = lhs <= c.value; break;
      case Op::Gt: ok = lhs > c.value; break;
      case Op::Ge: ok = lhs >= c.value; break;
    }
    if (!ok) return false;
  }
  return true;
}

std::string_view symptom_name(SymptomKind s) { return s == SymptomKind::DoS ? "DoS" : "Crash"; }

std::optional<SymptomKind> parse_symptom(std::string_view s) {
  std::string l = lower(s);
  if (l == "dos") return SymptomKind::DoS;
  if (l == "crash") return SymptomKind::Crash;
  return std::nullopt;
}

std::string_view crash_signal_name(CrashSignal s) {
  switch (s) {
    case CrashSignal::Reset: return "reset";
    case CrashSignal::Aborted: return "aborted";
    case CrashSignal::Refused: return "refused";
    case CrashSignal::Timeout: return "timeout";
  }
  return "?";
}

std::optional<CrashSignal> parse_crash_signal(std::string_view s) {
  std::string l = lower(s);
  for (CrashSignal c : {CrashSignal::Reset, CrashSignal::Aborted, CrashSignal::Refused,
                        CrashSignal::Timeout}) {
    if (crash_signal_name(c) == l) return c;
  }
  return std::nullopt;
}

// ---- profiles --------------------------------------------------------------

void DeviceProfile::validate() const {
  auto sdp = std::find_if(service_ports.begin(), service_ports.end(),
                          [](const ServicePort& p) { return p.psm == kSdpPsm; });
  if (sdp == service_ports.end()) throw ConfigError("profile must list the SDP port 0x0001");
  if (sdp->requires_pairing) throw ConfigError("the SDP port must not require pairing");
  for (const auto& p : service_ports) {
    // Valid PSMs are odd with an even most significant octet.
    if (p.psm % 2 == 0 || (p.psm >> 8) % 2 != 0) {
      throw ConfigError("service port " + hex16(p.psm) + " is not a valid PSM");
    }
  }
  if (oui > 0xFFFFFF) throw ConfigError("oui must fit in 24 bits");
  if (mtu < 48 || mtu > kMaxPayload) throw ConfigError("device mtu must be within 48..65535");
  if (max_channels == 0) throw ConfigError("max_channels must be at least 1");
}

DeviceProfile default_profile() {
  DeviceProfile p;
  p.mac = {0x00, 0x1A, 0x7D, 0xDA, 0x71, 0x13};
  p.oui = 0x001A7D;
  p.name = "sim-phone";
  p.device_class = "smartphone";
  p.service_ports = {{0x0001, false}, {0x0003, true},  {0x0011, true},
                     {0x0013, true},  {0x0017, true},  {0x0019, false}};
  return p;
}

DeviceInfo scan_info(const DeviceProfile& profile) {
  return {profile.mac, profile.name, profile.device_class, profile.oui};
}

std::vector<ServicePort> list_ports(const DeviceProfile& profile) { return profile.service_ports; }

// ---- simulator -------------------------------------------------------------

Simulator::Simulator(DeviceProfile profile, const TransitionTable& table,
                     std::filesystem::path dump_dir)
    : profile_(std::move(profile)), table_(&table), dump_dir_(std::move(dump_dir)) {
  if (dump_dir_.empty()) dump_dir_ = std::filesystem::temp_directory_path() / "sigfuzz-dumps";
}

void Simulator::reset() {
  state_ = L2capState::Closed;
  channels_.clear();
  symptom_.reset();
  own_id_ = 0;
}

void Simulator::force_state(L2capState s) {
  reset();
  state_ = s;
  if (s != L2capState::Closed) channels_.push_back({kDefaultCid, kDefaultCid, kSdpPsm});
}

LinkStatus Simulator::probe(std::uint16_t psm) const {
  if (symptom_) {
    if (symptom_->kind == SymptomKind::DoS) return LinkStatus::Failed;
    switch (symptom_->signal) {
      case CrashSignal::Reset: return LinkStatus::Reset;
      case CrashSignal::Aborted: return LinkStatus::Aborted;
      case CrashSignal::Refused: return LinkStatus::Refused;
      case CrashSignal::Timeout: return LinkStatus::Timeout;
    }
  }
  const ServicePort* p = port(psm);
  return p && !p->requires_pairing ? LinkStatus::Ok : LinkStatus::Refused;
}

LinkStatus Simulator::dead_receive_status() const {
  if (!symptom_ || symptom_->kind == SymptomKind::DoS) return LinkStatus::Timeout;
  switch (symptom_->signal) {
    case CrashSignal::Reset: return LinkStatus::Reset;
    case CrashSignal::Aborted: return LinkStatus::Aborted;
    default: return LinkStatus::Timeout;
  }
}

const ServicePort* Simulator::port(std::uint16_t psm) const {
  for (const auto& p : profile_.service_ports) {
    if (p.psm == psm) return &p;
  }
  return nullptr;
}

Channel* Simulator::by_local(std::uint16_t cid) {
  for (auto& c : channels_) {
    if (c.local_cid == cid) return &c;
  }
  return nullptr;
}

Channel* Simulator::by_remote(std::uint16_t cid) {
  for (auto& c : channels_) {
    if (c.remote_cid == cid) return &c;
  }
  return nullptr;
}

std::optional<std::uint16_t> Simulator::allocate_cid() const {
  for (std::uint32_t cid = kDefaultCid; cid <= 0xFFFF; ++cid) {
    bool used = std::any_of(channels_.begin(), channels_.end(),
                            [cid](const Channel& c) { return c.local_cid == cid; });
    if (!used) return static_cast<std::uint16_t>(cid);
  }
  return std::nullopt;
}

std::uint8_t Simulator::next_own_id() {
  own_id_ = own_id_ == 0xFF ? 0x01 : static_cast<std::uint8_t>(own_id_ + 1);
  return own_id_;
}

HandleResult Simulator::reject(std::uint8_t id, std::uint16_t reason, std::uint16_t scid,
                               std::uint16_t dcid) const {
  std::vector<DataField> f{{FieldName::Reason, reason, {}}};
  if (reason == kRejectMtuExceeded) {
    f.push_back({FieldName::Mtu, static_cast<std::uint16_t>(profile_.mtu), {}});
  }
  if (reason == kRejectInvalidCid) {
    f.push_back({FieldName::Scid, scid, {}});
    f.push_back({FieldName::Dcid, dcid, {}});
  }
  return {HandleResult::Kind::Response,
          encode(make_packet(CommandKind::CommandReject, id, std::move(f)))};
}

HandleResult Simulator::respond(const L2capPacket& p) const {
  return {HandleResult::Kind::Response, encode(p)};
}

std::optional<std::pair<std::uint16_t, std::uint16_t>> Simulator::bad_cids(
    CommandKind k, const L2capPacket& p) const {
  using F = FieldName;
  auto self = const_cast<Simulator*>(this);
  bool strict = profile_.strictness == Strictness::Strict;
  auto scid = p.value_of(F::Scid);
  auto dcid = p.value_of(F::Dcid);
  auto icid = p.value_of(F::Icid);
  auto bad = [&] {
    return std::make_pair(scid.value_or(icid.value_or(0)), dcid.value_or(icid.value_or(0)));
  };
  auto live_local = [&](std::optional<std::uint16_t> v) { return v && self->by_local(*v); };
  auto live_remote = [&](std::optional<std::uint16_t> v) { return v && self->by_remote(*v); };

  switch (k) {
    case CommandKind::ConnectReq:
    case CommandKind::CreateChannelReq:
      if (!in_cid_range(scid)) return bad();
      break;
    case CommandKind::ConnectRsp:
    case CommandKind::CreateChannelRsp:
      if (!in_cid_range(scid) || !in_cid_range(dcid)) return bad();
      if (strict && !live_local(scid)) return bad();
      break;
    case CommandKind::ConfigReq:
      if (!in_cid_range(dcid) || (strict && !live_local(dcid))) return bad();
      break;
    case CommandKind::ConfigRsp:
      if (!in_cid_range(scid) || (strict && !live_local(scid))) return bad();
      break;
    case CommandKind::DisconnectReq: {
      if (!in_cid_range(scid) || !in_cid_range(dcid)) return bad();
      const Channel* ch = self->by_local(*dcid);
      if (strict && (!ch || ch->remote_cid != *scid)) return bad();
      break;
    }
    case CommandKind::DisconnectRsp: {
      if (!in_cid_range(scid) || !in_cid_range(dcid)) return bad();
      const Channel* ch = self->by_local(*scid);
      if (strict && (!ch || ch->remote_cid != *dcid)) return bad();
      break;
    }
    case CommandKind::MoveChannelReq:
    case CommandKind::MoveChannelConfirmReq:
      if (!in_cid_range(icid) || (strict && !live_remote(icid))) return bad();
      break;
    case CommandKind::MoveChannelRsp:
    case CommandKind::MoveChannelConfirmRsp:
      if (!in_cid_range(icid) || (strict && !live_local(icid))) return bad();
      break;
    default: break;
  }
  return std::nullopt;
}

void Simulator::enter(std::optional<L2capState> next) {
  if (!next) return;
  state_ = *next;
  if (state_ == L2capState::Closed) channels_.clear();
}

void Simulator::trigger(const BugProfile& bug, const L2capPacket& p) {
  symptom_ = Symptom{bug.symptom, bug.crash_signal, bug.label};
  if (bug.symptom != SymptomKind::Crash) return;

  std::error_code ec;
  std::filesystem::create_directories(dump_dir_, ec);
  auto path = dump_dir_ / ("crash-" + utc_stamp() + "-" + std::to_string(++dump_counter_) + ".txt");
  std::ofstream out(path);
  if (!out) return;
  std::uint16_t cid = 0;
  for (FieldName f : {FieldName::Dcid, FieldName::Scid, FieldName::Icid}) {
    if (auto v = p.value_of(f)) {
      cid = *v;
      break;
    }
  }
  out << "*** *** *** *** *** *** *** *** *** *** *** *** *** *** *** ***\n"
      << "Build fingerprint: 'sigfuzz/simulated-target'\n"
      << "Device: " << profile_.name << " (" << format_mac(profile_.mac) << ")\n"
      << "Thread: bt_main_thread, name: >>> com.android.bluetooth <<<\n"
      << "signal 11 (SIGSEGV), code 1 (SEGV_MAPERR), fault addr 0x0000000000000000\n"
      << "Cause: null pointer dereference\n"
      << "Abort message: 'l2c channel control block lookup failed for CID " << hex16(cid) << "'\n"
      << "Bug: " << bug.label << "\n"
      << "State: " << state_name(state_) << " (job " << job_name(job_of(state_)) << ")\n"
      << "Command: " << command_name(*p.kind()) << " id=" << static_cast<int>(p.identifier) << "\n"
      << "Offending CID: " << hex16(cid) << "\n"
      << "Packet: " << to_hex(encode(p, EncodeMode::Raw)) << "\n"
      << "backtrace:\n"
      << "      #00 pc 0000000000071f8c  libbluetooth.so (l2c_csm_execute+28)\n"
      << "      #01 pc 0000000000069b40  libbluetooth.so (l2c_rcv_signaling_cmd+1372)\n"
      << "      #02 pc 000000000006a7d4  libbluetooth.so (l2c_rcv_acl_data+548)\n";
  out.close();
  dumps_.push_back(path);
}

HandleResult Simulator::handle(ByteView frame) {
  if (symptom_) return {HandleResult::Kind::Death, {}};
  if (frame.size() < kHeaderSize) return {};
  if (get_u16le(frame, 2) != kSignalingCid) return {};  // not for the signaling channel

  std::uint8_t id = frame.size() > 5 ? frame[5] : 0;
  std::size_t actual = frame.size() - kHeaderSize;
  if (actual > profile_.mtu) return reject(id, kRejectMtuExceeded);
  if (frame.size() < kMinFrameSize) return reject(id, kRejectNotUnderstood);
  if (get_u16le(frame, 0) != actual || get_u16le(frame, 6) != actual - kCommandHeaderSize ||
      id == 0 || !command_from_code(frame[4])) {
    return reject(id, kRejectNotUnderstood);
  }
  L2capPacket p = decode(frame);
  if (p.find(FieldName::Raw)) return reject(id, kRejectNotUnderstood);
  CommandKind k = *p.kind();

  for (const auto& bug : profile_.bugs) {
    if (bug.trigger_job == job_of(state_) && bug.trigger_command == k && bug.predicate.matches(p)) {
      trigger(bug, p);
      return {HandleResult::Kind::Death, {}};
    }
  }

  bool create = k == CommandKind::CreateChannelReq || k == CommandKind::CreateChannelRsp;
  bool move = k >= CommandKind::MoveChannelReq;
  if ((create && !profile_.create_channel) || (move && !profile_.move_channel)) {
    return reject(id, kRejectNotUnderstood);
  }

  TransitionRule rule = table_->rule(state_, k, profile_.strictness);
  auto bad = bad_cids(k, p);
  if (rule.action.type == Action::Type::Reject) {
    if (bad) return reject(id, kRejectInvalidCid, bad->first, bad->second);
    return reject(id, kRejectNotUnderstood);
  }
  if (bad && k != CommandKind::CommandReject) {
    return reject(id, kRejectInvalidCid, bad->first, bad->second);
  }
  return apply(rule, p);
}

HandleResult Simulator::apply(const TransitionRule& rule, const L2capPacket& p) {
  using F = FieldName;
  CommandKind k = *p.kind();
  std::uint8_t id = p.identifier;
  Channel* primary = channels_.empty() ? nullptr : &channels_.front();

  if (k == CommandKind::ConnectReq || k == CommandKind::CreateChannelReq) {
    bool create = k == CommandKind::CreateChannelReq;
    CommandKind rk = create ? CommandKind::CreateChannelRsp : CommandKind::ConnectRsp;
    std::uint16_t psm = *p.value_of(F::Psm);
    std::uint16_t scid = *p.value_of(F::Scid);
    auto answer = [&](std::uint16_t dcid, std::uint16_t result) {
      return respond(make_packet(
          rk, id, {{F::Dcid, dcid, {}}, {F::Scid, scid, {}}, {F::Result, result, {}}, {F::Status, 0, {}}}));
    };
    if (create && *p.value_of(F::ContId) > 0x01) return answer(0, 0x0005);  // controller not supported
    const ServicePort* sp = port(psm);
    if (!sp) return answer(0, 0x0002);                 // PSM not supported
    if (sp->requires_pairing) return answer(0, 0x0003);  // security block

    if (rule.next && state_ != L2capState::Closed) {
      // Second request for the pending channel completes it.
      if (!primary || primary->remote_cid != scid || primary->psm != psm) return answer(0, 0x0004);
      std::uint16_t local = primary->local_cid;
      enter(rule.next);
      return answer(local, 0x0000);
    }
    if (by_remote(scid)) return answer(0, 0x0007);  // source CID already allocated
    auto cid = allocate_cid();
    if (channels_.size() >= profile_.max_channels || !cid) return reject(id, kRejectNotUnderstood);
    channels_.push_back({*cid, scid, psm});
    bool pending = rule.next.has_value();
    enter(rule.next);
    return answer(*cid, pending ? 0x0001 : 0x0000);
  }

  if (k == CommandKind::ConnectRsp || k == CommandKind::CreateChannelRsp) {
    if (rule.next) {
      if (Channel* ch = by_local(*p.value_of(F::Scid))) ch->remote_cid = *p.value_of(F::Dcid);
    }
  }

  if (k == CommandKind::MoveChannelReq && *p.value_of(F::ContId) > 0x01) {
    return respond(make_packet(CommandKind::MoveChannelRsp, id,
                               {{F::Icid, *p.value_of(F::Icid), {}}, {F::Result, 0x0002, {}}}));
  }

  std::optional<L2capState> next = rule.next;
  enter(next);
  if (rule.action.type == Action::Type::Silent) return {};

  std::uint16_t peer_cid = primary ? primary->remote_cid : kDefaultCid;
  std::uint16_t own_cid = primary ? primary->local_cid : kDefaultCid;
  if (k == CommandKind::ConfigReq) {
    if (Channel* ch = by_local(*p.value_of(F::Dcid))) peer_cid = ch->remote_cid;
  }

  L2capPacket out;
  switch (rule.action.response) {
    case CommandKind::ConfigRsp:
      out = make_packet(CommandKind::ConfigRsp, id,
                        {{F::Scid, peer_cid, {}}, {F::Flags, 0, {}}, {F::Result, 0, {}}, {F::Opt, 0, {}}});
      break;
    case CommandKind::ConfigReq: {
      Bytes mtu_opt{0x01, 0x02};
      put_u16le(mtu_opt, static_cast<std::uint16_t>(profile_.mtu));
      out = make_packet(CommandKind::ConfigReq, next_own_id(),
                        {{F::Dcid, peer_cid, {}}, {F::Flags, 0, {}}, {F::Opt, 0, mtu_opt}});
      break;
    }
    case CommandKind::DisconnectRsp:
      out = make_packet(CommandKind::DisconnectRsp, id,
                        {{F::Dcid, *p.value_of(F::Dcid), {}}, {F::Scid, *p.value_of(F::Scid), {}}});
      break;
    case CommandKind::EchoRsp: {
      Bytes echo = p.garbage_tail;
      std::size_t room = profile_.mtu - kCommandHeaderSize;
      if (echo.size() > room) echo.resize(room);
      out = make_packet(CommandKind::EchoRsp, id, {}, echo);
      break;
    }
    case CommandKind::InfoRsp: {
      std::uint16_t type = *p.value_of(F::Type);
      std::vector<DataField> f{{F::Type, type, {}}, {F::Result, 0, {}}};
      Bytes data;
      if (type == 0x0001) {
        put_u16le(data, static_cast<std::uint16_t>(profile_.mtu));
      } else if (type == 0x0002) {
        // Extended features: ERTM, streaming, FCS, EFS, extended window, fixed channels.
        std::uint32_t mask = 0x000001B8;
        if (profile_.create_channel || profile_.move_channel) mask |= 0x00000040;
        data = {static_cast<std::uint8_t>(mask), static_cast<std::uint8_t>(mask >> 8),
                static_cast<std::uint8_t>(mask >> 16), static_cast<std::uint8_t>(mask >> 24)};
      } else if (type == 0x0003) {
        data = {0x06, 0, 0, 0, 0, 0, 0, 0};  // signaling + connectionless
      } else {
        f[1].value = 0x0001;  // not supported
      }
      if (!data.empty()) f.push_back({F::Data, 0, data});
      out = make_packet(CommandKind::InfoRsp, id, std::move(f));
      break;
    }
    case CommandKind::MoveChannelRsp: {
      std::uint16_t result = next == L2capState::WaitMove ? 0x0001 : 0x0000;
      out = make_packet(CommandKind::MoveChannelRsp, id,
                        {{F::Icid, *p.value_of(F::Icid), {}}, {F::Result, result, {}}});
      break;
    }
    case CommandKind::MoveChannelConfirmReq:
      out = make_packet(CommandKind::MoveChannelConfirmReq, next_own_id(),
                        {{F::Icid, own_cid, {}}, {F::Result, 0, {}}});
      break;
    case CommandKind::MoveChannelConfirmRsp:
      out = make_packet(CommandKind::MoveChannelConfirmRsp, id, {{F::Icid, *p.value_of(F::Icid), {}}});
      break;
    default: out = default_packet(rule.action.response, id); break;
  }
  return respond(out);
}

// ---- in-process transport --------------------------------------------------

DeviceInfo LocalTransport::device_info() { return scan_info(sim_.profile()); }

std::vector<ServicePort> LocalTransport::list_ports() { return sigfuzz::list_ports(sim_.profile()); }

LinkStatus LocalTransport::connect(std::uint16_t psm) { return sim_.probe(psm); }

void LocalTransport::send(ByteView frame) {
  Bytes wire = wrap_acl(frame);
  HandleResult r = sim_.handle(unwrap_acl(wire));
  if (r.kind == HandleResult::Kind::Response) inbox_.push_back(wrap_acl(r.frame));
}

ReceiveResult LocalTransport::receive(std::chrono::milliseconds) {
  if (!inbox_.empty()) {
    ReceiveResult r{LinkStatus::Ok, unwrap_acl(inbox_.front())};
    inbox_.pop_front();
    return r;
  }
  if (sim_.dead()) return {sim_.dead_receive_status(), {}};
  return {LinkStatus::Timeout, {}};
}

bool LocalTransport::reset_target() {
  inbox_.clear();
  sim_.reset();
  return true;
}

}  // namespace sigfuzz
