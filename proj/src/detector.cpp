#include "sigfuzz/detector.hpp"

#include <algorithm>
#include <vector>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

std::string_view classification_name(Classification c) {
  switch (c) {
    case Classification::Accepted: return "Accepted";
    case Classification::Rejected: return "Rejected";
    case Classification::ConnectionFailed: return "ConnectionFailed";
    case Classification::ConnectionAborted: return "ConnectionAborted";
    case Classification::ConnectionReset: return "ConnectionReset";
    case Classification::ConnectionRefused: return "ConnectionRefused";
    case Classification::Timeout: return "Timeout";
  }
  return "?";
}

std::string_view severity_name(Severity s) {
  switch (s) {
    case Severity::None: return "None";
    case Severity::DoS: return "DoS";
    case Severity::Crash: return "Crash";
  }
  return "?";
}

FuzzVerdict detect(const ReceiveResult& response, std::optional<bool> ping_ok,
                   const std::optional<std::filesystem::path>& crash_dump) {
  FuzzVerdict v;
  v.ping_ok = ping_ok;
  v.dump = crash_dump;
  switch (response.status) {
    case LinkStatus::Ok:
      if (response.frame.size() >= kMinFrameSize &&
          response.frame[4] == command_code(CommandKind::CommandReject)) {
        v.classification = Classification::Rejected;
        if (response.frame.size() >= kMinFrameSize + 2) {
          v.reject_reason = get_u16le(response.frame, kMinFrameSize);
        }
      } else {
        v.classification = Classification::Accepted;
      }
      return v;
    case LinkStatus::Failed: v.classification = Classification::ConnectionFailed; break;
    case LinkStatus::Aborted: v.classification = Classification::ConnectionAborted; break;
    case LinkStatus::Reset: v.classification = Classification::ConnectionReset; break;
    case LinkStatus::Refused: v.classification = Classification::ConnectionRefused; break;
    case LinkStatus::Timeout: v.classification = Classification::Timeout; break;
  }
  bool ping_failed = ping_ok.has_value() && !*ping_ok;
  if (v.classification == Classification::ConnectionFailed) {
    if (ping_failed) v.severity = Severity::DoS;
  } else if (ping_failed || crash_dump) {
    v.severity = Severity::Crash;
  }
  return v;
}

DumpWatcher::DumpWatcher(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir_, ec)) seen_.insert(e.path());
}

std::optional<std::filesystem::path> DumpWatcher::poll() {
  std::error_code ec;
  std::vector<std::filesystem::path> fresh;
  for (const auto& e : std::filesystem::directory_iterator(dir_, ec)) {
    if (e.is_regular_file(ec) && !seen_.count(e.path())) fresh.push_back(e.path());
  }
  if (fresh.empty()) return std::nullopt;
  std::sort(fresh.begin(), fresh.end());
  seen_.insert(fresh.front());
  return fresh.front();
}

FuzzVerdict assess(SignalingSession& session, const ReceiveResult& rx, std::uint16_t psm,
                   DumpWatcher* dumps) {
  if (rx.status == LinkStatus::Ok) return detect(rx, std::nullopt, std::nullopt);

  PingResult ping = session.ping();
  ReceiveResult effective{rx.status, {}};
  if (!ping.ok && rx.status == LinkStatus::Timeout) {
    // A silent target: a fresh connection attempt tells DoS and crash apart.
    LinkStatus probe = session.probe(psm, Phase::Probe);
    if (probe != LinkStatus::Ok) effective.status = probe;
  }
  std::optional<std::filesystem::path> dump;
  if (dumps) dump = dumps->poll();
  return detect(effective, ping.ok, dump);
}

}  // namespace sigfuzz
