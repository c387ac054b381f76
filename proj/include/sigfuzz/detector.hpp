#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "sigfuzz/session.hpp"
#include "sigfuzz/transport.hpp"

namespace sigfuzz {

enum class Classification : std::uint8_t {
  Accepted,
  Rejected,
  ConnectionFailed,
  ConnectionAborted,
  ConnectionReset,
  ConnectionRefused,
  Timeout,
};

enum class Severity : std::uint8_t { None, DoS, Crash };

std::string_view classification_name(Classification c);
std::string_view severity_name(Severity s);

struct FuzzVerdict {
  Classification classification = Classification::Accepted;
  std::optional<std::uint16_t> reject_reason;  // Rejected only
  Severity severity = Severity::None;
  std::optional<bool> ping_ok;                 // set when a ping was run
  std::optional<std::filesystem::path> dump;

  bool operator==(const FuzzVerdict&) const = default;
};

// Pure mapping from what was observed to a verdict.
//   DoS   <=> ConnectionFailed and the ping failed
//   Crash <=> Aborted/Reset/Refused/Timeout and (ping failed or a dump exists)
FuzzVerdict detect(const ReceiveResult& response, std::optional<bool> ping_ok,
                   const std::optional<std::filesystem::path>& crash_dump);

// Notices crash dump files that appear in a directory.
class DumpWatcher {
 public:
  explicit DumpWatcher(std::filesystem::path dir);
  // Oldest file not reported before, if any.
  std::optional<std::filesystem::path> poll();

 private:
  std::filesystem::path dir_;
  std::set<std::filesystem::path> seen_;
};

// Runs the follow-up checks for one fuzz reply: nothing for a reply, otherwise
// a ping, and for a silent target a fresh connection probe to `psm`.
FuzzVerdict assess(SignalingSession& session, const ReceiveResult& rx, std::uint16_t psm,
                   DumpWatcher* dumps);

}  // namespace sigfuzz
