#include "sigfuzz/campaign.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

using ojson = nlohmann::ordered_json;

namespace {

std::string hex16(std::uint16_t v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%04X", v);
  return buf;
}

std::string command_label(std::uint8_t code) {
  if (auto k = command_from_code(code)) return std::string(command_name(*k));
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%02X", code);
  return buf;
}

std::string trim(std::string_view s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string_view::npos) return {};
  std::size_t b = s.find_last_not_of(" \t");
  return std::string(s.substr(a, b - a + 1));
}

ojson record_to_json(const MutationRecord& rec) {
  ojson fields = ojson::array();
  for (const auto& m : rec.mutated_fields) {
    fields.push_back({{"field", field_name(m.field)}, {"old", hex16(m.old_value)}, {"new", hex16(m.new_value)}});
  }
  return {{"base_command", command_name(rec.base_command)},
          {"mode", mutation_mode_name(rec.mode)},
          {"mutated_fields", fields},
          {"garbage", to_hex(rec.garbage)},
          {"wire", to_hex(rec.wire)},
          {"seed", rec.seed},
          {"index", rec.index},
          {"rng_draws", rec.rng_draws}};
}

ojson verdict_to_json(const FuzzVerdict& v) {
  ojson j{{"classification", classification_name(v.classification)}};
  if (v.reject_reason) j["reason"] = hex16(*v.reject_reason);
  j["severity"] = severity_name(v.severity);
  if (v.ping_ok) j["ping_ok"] = *v.ping_ok;
  if (v.dump) j["dump"] = v.dump->string();
  return j;
}

ojson scan_to_json(const ScanReport& scan) {
  ojson ports = ojson::array();
  for (const auto& p : scan.probes) {
    ports.push_back({{"psm", hex16(p.psm)},
                     {"requires_pairing", p.requires_pairing},
                     {"probe", link_status_name(p.result)}});
  }
  return {{"mac", format_mac(scan.info.mac)},
          {"name", scan.info.name},
          {"device_class", scan.info.device_class},
          {"oui", [&] {
             char buf[12];
             std::snprintf(buf, sizeof buf, "0x%06X", scan.info.oui);
             return std::string(buf);
           }()},
          {"ports", ports},
          {"chosen_psm", hex16(scan.chosen_psm)},
          {"sdp_fallback", scan.sdp_fallback}};
}

ojson packet_to_json(std::uint64_t seq, const ExchangeRecord& ev) {
  ojson j{{"seq", seq}, {"type", "packet"}, {"phase", phase_name(ev.phase)},
          {"state", state_name(ev.state)}};
  if (ev.psm) j["psm"] = hex16(*ev.psm);
  if (ev.tx.size() > 4) j["command"] = command_label(ev.tx[4]);
  if (!ev.tx.empty()) j["tx"] = to_hex(ev.tx);
  j["malformed"] = ev.malformed;
  j["status"] = link_status_name(ev.rx.status);
  if (ev.rx.status == LinkStatus::Ok && !ev.rx.frame.empty()) {
    j["rx"] = to_hex(ev.rx.frame);
    if (ev.rx.frame.size() > 4) j["rx_command"] = command_label(ev.rx.frame[4]);
  }
  if (ev.record) j["record"] = record_to_json(*ev.record);
  return j;
}

ojson metrics_to_json(const CampaignMetrics& m) {
  ojson states = ojson::array();
  for (L2capState s : m.states_covered) states.push_back(state_name(s));
  return {{"transmitted", m.transmitted},
          {"transmitted_malformed", m.transmitted_malformed},
          {"received", m.received},
          {"received_rejections", m.received_rejections},
          {"states_covered", states},
          {"states_covered_count", m.states_covered.size()}};
}

}  // namespace

// ---- filter / config -------------------------------------------------------

StateFilter StateFilter::parse(std::string_view text) {
  StateFilter f;
  f.text_ = std::string(text);
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    std::string tok = trim(text.substr(start, end - start));
    start = end + 1;
    if (tok.empty()) continue;
    bool negate = tok[0] == '!';
    if (negate) tok = trim(tok.substr(1));
    std::vector<L2capState> states;
    if (auto j = parse_job(tok)) {
      states = states_of(*j);
    } else if (auto s = parse_state(tok)) {
      states = {*s};
    } else {
      throw ConfigError("unknown state or job \"" + tok + "\" in state filter");
    }
    auto& dst = negate ? f.exclude_ : f.include_;
    dst.insert(dst.end(), states.begin(), states.end());
  }
  return f;
}

bool StateFilter::allows(L2capState s) const {
  if (std::find(exclude_.begin(), exclude_.end(), s) != exclude_.end()) return false;
  return include_.empty() || std::find(include_.begin(), include_.end(), s) != include_.end();
}

std::string_view malformed_rule_name(MalformedRule r) {
  return r == MalformedRule::EveryOutput ? "every-output" : "changed-bytes";
}

void CampaignConfig::validate() const {
  mutation.validate();
  if (step_timeout.count() <= 0) throw ConfigError("step timeout must be positive");
}

std::string_view state_outcome_name(StateOutcome::Status s) {
  switch (s) {
    case StateOutcome::Status::Filtered: return "filtered";
    case StateOutcome::Status::PeerInitiated: return "peer-initiated";
    case StateOutcome::Status::Unreachable: return "unreachable";
    case StateOutcome::Status::Tested: return "tested";
    case StateOutcome::Status::Aborted: return "aborted";
  }
  return "?";
}

std::vector<L2capState> campaign_state_order() {
  std::vector<L2capState> out;
  for (Job j : kAllJobs) {
    for (L2capState s : states_of(j)) out.push_back(s);
  }
  return out;
}

// ---- scanning --------------------------------------------------------------

ScanReport scan_target(SignalingSession& session) {
  ScanReport r;
  Transport& t = session.transport();
  r.info = t.device_info();
  r.ports = t.list_ports();
  for (const auto& p : r.ports) {
    r.probes.push_back({p.psm, p.requires_pairing, session.probe(p.psm, Phase::Scan)});
  }
  for (const auto& p : r.probes) {
    if (p.psm != kSdpPsm && p.result == LinkStatus::Ok) {
      r.chosen_psm = p.psm;
      return r;
    }
  }
  auto sdp = std::find_if(r.probes.begin(), r.probes.end(),
                          [](const PortProbe& p) { return p.psm == kSdpPsm; });
  LinkStatus sdp_status = sdp != r.probes.end() ? sdp->result : session.probe(kSdpPsm, Phase::Scan);
  if (sdp_status != LinkStatus::Ok) {
    throw NoReachablePortError("no pairing-free port answered and the SDP port is " +
                               std::string(link_status_name(sdp_status)));
  }
  r.chosen_psm = kSdpPsm;
  r.sdp_fallback = true;
  return r;
}

// ---- campaign --------------------------------------------------------------

namespace {

class Runner {
 public:
  Runner(Transport& transport, const TransitionTable& table, const CampaignConfig& config,
         JsonlSink* sink)
      : transport_(transport),
        table_(table),
        config_(config),
        sink_(sink),
        session_(transport, table, config.step_timeout),
        mutator_(config.mutation),
        rng_(config.mutation.seed) {
    session_.set_observer([this](const ExchangeRecord& ev) { on_exchange(ev); });
    if (!config_.dump_dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(config_.dump_dir, ec);
      dumps_.emplace(config_.dump_dir);
    }
  }

  CampaignLog run() {
    auto start = std::chrono::steady_clock::now();
    emit({{"type", "config"},
          {"mode", mutation_mode_name(config_.mode)},
          {"seed", config_.mutation.seed},
          {"packets_per_command", config_.mutation.packets_per_command},
          {"mtu", config_.mutation.mtu},
          {"garbage_max", config_.mutation.garbage_max},
          {"states", config_.states.text()},
          {"continue_after_reset", config_.continue_after_reset},
          {"malformed_rule", malformed_rule_name(config_.malformed_rule)},
          {"step_timeout_ms", config_.step_timeout.count()}});

    log_.scan = scan_target(session_);
    ojson scan = scan_to_json(log_.scan);
    scan["type"] = "scan";
    emit(std::move(scan));
    session_.context().psm = log_.scan.chosen_psm;

    for (L2capState s : campaign_state_order()) {
      if (stop_) break;
      StateOutcome out{s, StateOutcome::Status::Filtered, 0, 0, {}};
      if (!config_.states.allows(s)) {
        finish_state(out);
        continue;
      }
      if (table_.peer_initiated(s)) {
        out.status = StateOutcome::Status::PeerInitiated;
        finish_state(out);
        continue;
      }
      fuzz_state(out);
      finish_state(out);
    }

    log_.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log_.elapsed_seconds > 0) {
      log_.metrics.packets_per_second = log_.metrics.transmitted / log_.elapsed_seconds;
    }
    emit({{"type", "end"}, {"halted", log_.halted}, {"resets", log_.resets},
          {"metrics", metrics_to_json(log_.metrics)}});
    return std::move(log_);
  }

 private:
  void emit(ojson j) {
    ojson line{{"seq", ++seq_}};
    for (auto& [k, v] : j.items()) line[k] = v;
    if (buffering_) {
      pending_.push_back(std::move(line));
    } else if (sink_) {
      sink_->line(line.dump());
    }
  }

  void flush() {
    buffering_ = false;
    if (sink_) {
      for (const auto& j : pending_) sink_->line(j.dump());
    }
    pending_.clear();
  }

  void on_exchange(const ExchangeRecord& ev) {
    CampaignMetrics& m = log_.metrics;
    ++m.transmitted;
    if (ev.malformed) ++m.transmitted_malformed;
    if (ev.rx.status == LinkStatus::Ok) {
      ++m.received;
      if (ev.rx.frame.size() > 4 && ev.rx.frame[4] == command_code(CommandKind::CommandReject)) {
        ++m.received_rejections;
      }
    }
    if (ev.phase == Phase::Fuzz) m.states_covered.insert(ev.state);
    ojson j = packet_to_json(seq_ + 1, ev);
    j.erase("seq");
    emit(std::move(j));
  }

  GuideResult guide(L2capState target) {
    GuideResult g = guide_to(target, session_);
    ojson path = ojson::array();
    for (CommandKind k : g.path) path.push_back(command_name(k));
    ojson j{{"type", "guide"},
            {"target", state_name(target)},
            {"result", g.reached ? "reached" : "unreachable"},
            {"state", state_name(g.state)},
            {"path", path}};
    if (!g.detail.empty()) j["detail"] = g.detail;
    emit(std::move(j));
    return g;
  }

  bool packet_cap_reached() const {
    return config_.max_packets != 0 && log_.metrics.transmitted >= config_.max_packets;
  }

  void fuzz_state(StateOutcome& out) {
    L2capState target = out.state;
    GuideResult g = guide(target);
    if (!g.reached) {
      out.status = StateOutcome::Status::Unreachable;
      out.detail = g.detail;
      return;
    }
    out.status = StateOutcome::Status::Tested;
    auto commands = valid_commands(job_of(target));
    auto batch = mutator_.generate_batch(commands, rng_, config_.mode, next_index_);
    next_index_ += batch.size();

    for (auto& rec : batch) {
      if (packet_cap_reached()) {
        out.status = StateOutcome::Status::Aborted;
        out.detail = "packet cap reached";
        stop_ = true;
        return;
      }
      if (session_.state() != target) {
        ++out.reguides;
        GuideResult again = guide(target);
        if (!again.reached) {
          out.status = StateOutcome::Status::Aborted;
          out.detail = "lost the state: " + again.detail;
          return;
        }
      }
      rec.stamp_identifier(session_.next_identifier());
      bool malformed = config_.malformed_rule == MalformedRule::EveryOutput || rec.changed();
      std::uint64_t before = log_.metrics.transmitted;

      buffering_ = true;
      ReceiveResult rx = session_.exchange(rec.wire, Phase::Fuzz, malformed, &rec);
      std::size_t fuzz_line = pending_.size() - 1;
      FuzzVerdict verdict = assess(session_, rx, log_.scan.chosen_psm, dumps_ ? &*dumps_ : nullptr);
      pending_[fuzz_line]["verdict"] = verdict_to_json(verdict);
      flush();
      ++out.packets_fuzzed;

      if (verdict.severity == Severity::None) {
        if (auto k = command_from_code(rec.packet.code)) session_.track(*k, rx);
        continue;
      }

      Vulnerability v{target, rec, verdict, before, elapsed()};
      emit({{"type", "vulnerability"},
            {"state", state_name(target)},
            {"job", job_name(job_of(target))},
            {"severity", severity_name(verdict.severity)},
            {"verdict", verdict_to_json(verdict)},
            {"packets_before", before},
            {"record", record_to_json(rec)}});
      log_.vulnerabilities.push_back(std::move(v));
      if (!config_.continue_after_reset || !transport_.reset_target()) {
        log_.halted = true;
        stop_ = true;
        return;
      }
      ++log_.resets;
      session_.set_state(L2capState::Closed);
      session_.context().remote_cid = kDefaultCid;
      emit({{"type", "reset"}, {"state", state_name(L2capState::Closed)}});
    }
  }

  void finish_state(const StateOutcome& out) {
    ojson j{{"type", "state"},
            {"state", state_name(out.state)},
            {"job", job_name(job_of(out.state))},
            {"status", state_outcome_name(out.status)},
            {"packets_fuzzed", out.packets_fuzzed},
            {"reguides", out.reguides}};
    if (!out.detail.empty()) j["detail"] = out.detail;
    emit(std::move(j));
    log_.states.push_back(out);
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  }

  Transport& transport_;
  const TransitionTable& table_;
  const CampaignConfig& config_;
  JsonlSink* sink_;
  SignalingSession session_;
  Mutator mutator_;
  SeededRandom rng_;
  std::optional<DumpWatcher> dumps_;
  CampaignLog log_;
  std::uint64_t seq_ = 0;
  std::uint64_t next_index_ = 0;
  bool buffering_ = false;
  bool stop_ = false;
  std::vector<ojson> pending_;
  std::chrono::steady_clock::time_point started_ = std::chrono::steady_clock::now();
};

}  // namespace

CampaignLog run_campaign(Transport& transport, const TransitionTable& table,
                         const CampaignConfig& config, JsonlSink* sink) {
  config.validate();
  Runner runner(transport, table, config, sink);
  return runner.run();
}

std::string summary_json(const CampaignLog& log, const CampaignConfig& config) {
  ojson metrics = metrics_to_json(log.metrics);
  metrics["packets_per_second"] = log.metrics.packets_per_second;
  metrics["mp_ratio"] = mp_ratio(log.metrics);
  metrics["pr_ratio"] = pr_ratio(log.metrics);
  metrics["mutation_efficiency"] = mutation_efficiency(log.metrics);
  metrics["mp_percent"] = mp_percent(log.metrics);
  metrics["pr_percent"] = pr_percent(log.metrics);
  metrics["efficiency_percent"] = efficiency_percent(log.metrics);

  ojson states = ojson::array();
  for (const auto& s : log.states) {
    ojson j{{"state", state_name(s.state)},
            {"status", state_outcome_name(s.status)},
            {"packets_fuzzed", s.packets_fuzzed}};
    if (!s.detail.empty()) j["detail"] = s.detail;
    states.push_back(j);
  }
  ojson vulns = ojson::array();
  for (const auto& v : log.vulnerabilities) {
    vulns.push_back({{"state", state_name(v.state)},
                     {"severity", severity_name(v.verdict.severity)},
                     {"verdict", verdict_to_json(v.verdict)},
                     {"packets_before", v.packets_before},
                     {"elapsed_seconds", v.elapsed_seconds},
                     {"record", record_to_json(v.record)}});
  }
  ojson j{{"mode", mutation_mode_name(config.mode)},
          {"seed", config.mutation.seed},
          {"halted", log.halted},
          {"resets", log.resets},
          {"elapsed_seconds", log.elapsed_seconds},
          {"metrics", metrics},
          {"scan", scan_to_json(log.scan)},
          {"states", states},
          {"vulnerabilities", vulns}};
  return j.dump(2);
}

std::string scan_json(const ScanReport& scan) { return scan_to_json(scan).dump(2); }
std::string record_json(const MutationRecord& rec) { return record_to_json(rec).dump(); }
std::string verdict_json(const FuzzVerdict& v) { return verdict_to_json(v).dump(); }

// ---- replay ----------------------------------------------------------------

ReplayResult replay(Transport& transport, const TransitionTable& table, const std::string& log_line,
                    const CampaignConfig& config) {
  ojson j = ojson::parse(log_line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("replay input is not a JSON object");
  std::string state_text = j.value("state", "");
  auto state = parse_state(state_text);
  if (!state) throw ConfigError("replay input has no valid \"state\"");
  std::string hex;
  if (j.contains("record") && j["record"].contains("wire")) {
    hex = j["record"]["wire"].get<std::string>();
  } else if (j.contains("tx")) {
    hex = j["tx"].get<std::string>();
  } else {
    throw ConfigError("replay input carries no packet bytes");
  }

  ReplayResult r;
  r.state = *state;
  r.tx = from_hex(hex);
  SignalingSession session(transport, table, config.step_timeout);
  ScanReport scan = scan_target(session);
  session.context().psm = scan.chosen_psm;
  r.guide = guide_to(*state, session);
  if (!r.guide.reached) return r;
  std::optional<DumpWatcher> dumps;
  if (!config.dump_dir.empty()) dumps.emplace(config.dump_dir);
  r.rx = session.exchange(r.tx, Phase::Replay, true);
  r.verdict = assess(session, r.rx, scan.chosen_psm, dumps ? &*dumps : nullptr);
  return r;
}

std::string replay_json(const ReplayResult& r) {
  ojson path = ojson::array();
  for (CommandKind k : r.guide.path) path.push_back(command_name(k));
  ojson j{{"state", state_name(r.state)},
          {"guide", r.guide.reached ? "reached" : "unreachable"},
          {"path", path},
          {"tx", to_hex(r.tx)}};
  if (!r.guide.reached) {
    j["detail"] = r.guide.detail;
    return j.dump(2);
  }
  j["status"] = link_status_name(r.rx.status);
  if (r.rx.status == LinkStatus::Ok) j["rx"] = to_hex(r.rx.frame);
  j["verdict"] = verdict_to_json(r.verdict);
  return j.dump(2);
}

}  // namespace sigfuzz
