// Command-line front end. Talks to the core only through sigfuzz.h.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sigfuzz/sigfuzz.h"

namespace {

constexpr int kExitClean = 0;
constexpr int kExitFound = 1;
constexpr int kExitError = 2;

volatile int g_stop = 0;

void on_signal(int) { g_stop = 1; }

int error_exit(const std::string& msg) {
  std::cerr << "sigfuzz: " << msg << "\n";
  return kExitError;
}

int status_exit(sigfuzz_status st) {
  if (st == SIGFUZZ_OK) return kExitClean;
  if (st == SIGFUZZ_FOUND) return kExitFound;
  return error_exit(sigfuzz_last_error());
}

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { sigfuzz_string_free(s); }
};

struct ConfigHandle {
  sigfuzz_config* cfg = nullptr;
  ~ConfigHandle() { sigfuzz_config_free(cfg); }
};

// Settings collected from flags; applied on top of file and environment.
struct Overrides {
  std::string profile;
  std::uint16_t udp_port = 0;
  std::vector<std::pair<std::string, std::string>> settings;
};

// Builds the configuration: defaults < profile file < environment < flags.
std::optional<int> build_config(const Overrides& o, ConfigHandle& h) {
  sigfuzz_status st;
  if (!o.profile.empty()) {
    st = sigfuzz_config_load(o.profile.c_str(), &h.cfg);
    if (st != SIGFUZZ_OK) return status_exit(st);
  } else {
    h.cfg = sigfuzz_config_new();
    if (!h.cfg) return error_exit("out of memory");
  }
  if ((st = sigfuzz_config_apply_env(h.cfg)) != SIGFUZZ_OK) return status_exit(st);
  for (const auto& [k, v] : o.settings) {
    if ((st = sigfuzz_config_set(h.cfg, k.c_str(), v.c_str())) != SIGFUZZ_OK) return status_exit(st);
  }
  sigfuzz_config_set_udp_target(h.cfg, o.udp_port);
  return std::nullopt;
}

// A record argument is a JSONL file (picks --seq, else the first
// vulnerability line) or a literal JSON line.
std::optional<std::string> pick_record(const std::string& arg, std::optional<std::uint64_t> seq,
                                       std::string& err) {
  if (!arg.empty() && arg.front() == '{') return arg;
  std::ifstream in(arg);
  if (!in) {
    err = "cannot read " + arg;
    return std::nullopt;
  }
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    if (seq) {
      if (j.value("seq", std::uint64_t{0}) == *seq) return line;
    } else if (j.value("type", "") == "vulnerability") {
      return line;
    }
  }
  err = seq ? "no line with seq " + std::to_string(*seq) + " in " + arg
            : "no vulnerability line in " + arg + " (use --seq)";
  return std::nullopt;
}

std::string brief_hex(const std::string& hex) {
  constexpr std::size_t kShown = 16 * 3 - 1;
  return hex.size() <= kShown ? hex : hex.substr(0, kShown) + " ...";
}

void add_target_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--profile", o.profile, "JSON run configuration (device, bugs, mutation, campaign)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--udp-port", o.udp_port, "talk to a simulator served on 127.0.0.1:<port>");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stateful L2CAP signaling fuzzer with a bundled simulated target"};
  app.require_subcommand(0, 1);
  bool dump_table = false;
  bool show_version = false;
  app.add_flag("--dump-table", dump_table, "print the state transition table and exit");
  app.add_flag("--version", show_version, "print the version and exit");

  Overrides scan_o;
  auto* scan = app.add_subcommand("scan", "probe the target's meta-information and service ports");
  add_target_flags(scan, scan_o);

  Overrides fuzz_o;
  std::string out_dir = "out";
  std::optional<std::string> seed, n_per, mtu, mode, states, malformed_rule, step_timeout, max_packets,
      garbage_max;
  bool continue_after_reset = false;
  auto* fuzz = app.add_subcommand("fuzz", "run a campaign over every reachable state");
  add_target_flags(fuzz, fuzz_o);
  fuzz->add_option("--seed", seed, "mutation seed");
  fuzz->add_option("--n-per-command", n_per, "mutated packets per valid command and state");
  fuzz->add_option("--mtu", mtu, "payload bound for mutated packets");
  fuzz->add_option("--mode", mode, "core (core-field mutation) or baseline (all fields)")
      ->check(CLI::IsMember({"core", "baseline"}));
  fuzz->add_flag("--continue-after-reset", continue_after_reset,
                 "reset the target after a finding and keep going");
  fuzz->add_option("--states", states, "state filter, e.g. \"Configuration,!WAIT_CONFIG_RSP\"");
  fuzz->add_option("--malformed-rule", malformed_rule, "every-output or changed-bytes")
      ->check(CLI::IsMember({"every-output", "changed-bytes"}));
  fuzz->add_option("--step-timeout-ms", step_timeout, "response timeout per packet");
  fuzz->add_option("--max-packets", max_packets, "stop after this many transmitted packets");
  fuzz->add_option("--garbage-max", garbage_max, "upper bound on appended garbage bytes");
  fuzz->add_option("--out", out_dir, "output directory")->capture_default_str();

  Overrides replay_o;
  std::string record;
  std::optional<std::uint64_t> replay_seq;
  std::string replay_out;
  auto* rep = app.add_subcommand("replay", "re-send one logged packet after guiding to its state");
  add_target_flags(rep, replay_o);
  rep->add_option("record", record, "packets.jsonl file or one JSON log line")->required();
  rep->add_option("--seq", replay_seq, "log line to replay (default: first vulnerability)");
  rep->add_option("--out", replay_out, "directory for crash dumps");

  std::string report_path;
  auto* report = app.add_subcommand("report", "print MP / PR / efficiency / coverage for a run");
  report->add_option("log", report_path, "packets.jsonl, summary.json or an output directory")->required();

  Overrides serve_o;
  std::uint16_t serve_port = 0;
  auto* serve = app.add_subcommand("serve", "serve the simulated device over UDP until interrupted");
  serve->add_option("--profile", serve_o.profile, "JSON run configuration")->check(CLI::ExistingFile);
  serve->add_option("--port", serve_port, "UDP port on 127.0.0.1 (0 picks one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitClean : kExitError;
  }

  if (show_version) {
    std::cout << sigfuzz_version() << "\n";
    return kExitClean;
  }
  if (dump_table) {
    OwnedString t;
    sigfuzz_status st = sigfuzz_table_dump(&t.s);
    if (st != SIGFUZZ_OK) return status_exit(st);
    std::cout << t.s;
    return kExitClean;
  }

  if (*scan) {
    ConfigHandle h;
    if (auto rc = build_config(scan_o, h)) return *rc;
    OwnedString out;
    sigfuzz_status st = sigfuzz_scan(h.cfg, &out.s);
    if (st != SIGFUZZ_OK) return status_exit(st);
    std::cout << out.s << "\n";
    return kExitClean;
  }

  if (*fuzz) {
    auto add = [&](const char* key, const std::optional<std::string>& v) {
      if (v) fuzz_o.settings.emplace_back(key, *v);
    };
    add("seed", seed);
    add("n-per-command", n_per);
    add("mtu", mtu);
    add("mode", mode);
    add("states", states);
    add("malformed-rule", malformed_rule);
    add("step-timeout-ms", step_timeout);
    add("max-packets", max_packets);
    add("garbage-max", garbage_max);
    if (continue_after_reset) fuzz_o.settings.emplace_back("continue-after-reset", "true");
    ConfigHandle h;
    if (auto rc = build_config(fuzz_o, h)) return *rc;
    OwnedString summary;
    sigfuzz_status st = sigfuzz_fuzz(h.cfg, out_dir.c_str(), &summary.s);
    if (st != SIGFUZZ_OK && st != SIGFUZZ_FOUND) return status_exit(st);
    auto j = nlohmann::json::parse(summary.s, nullptr, false);
    if (!j.is_discarded()) {
      const auto& m = j["metrics"];
      std::cout << "transmitted " << m.value("transmitted", 0) << ", states covered "
                << m.value("states_covered_count", 0) << ", vulnerabilities "
                << j["vulnerabilities"].size() << (j.value("halted", false) ? " (halted)" : "")
                << "\nlog: " << out_dir << "/packets.jsonl\n";
      for (const auto& v : j["vulnerabilities"]) {
        std::cout << v.value("severity", "") << " in " << v.value("state", "") << " after "
                  << v.value("packets_before", 0) << " packets: " << brief_hex(v["record"].value("wire", ""))
                  << "\n";
      }
    }
    return status_exit(st);
  }

  if (*rep) {
    std::string err;
    auto line = pick_record(record, replay_seq, err);
    if (!line) return error_exit(err);
    ConfigHandle h;
    if (auto rc = build_config(replay_o, h)) return *rc;
    OwnedString out;
    sigfuzz_status st =
        sigfuzz_replay(h.cfg, line->c_str(), replay_out.empty() ? nullptr : replay_out.c_str(), &out.s);
    if (out.s) std::cout << out.s << "\n";
    return status_exit(st);
  }

  if (*report) {
    OwnedString out;
    sigfuzz_status st = sigfuzz_report(report_path.c_str(), &out.s);
    if (st != SIGFUZZ_OK) return status_exit(st);
    std::cout << out.s;
    return kExitClean;
  }

  if (*serve) {
    ConfigHandle h;
    if (auto rc = build_config(serve_o, h)) return *rc;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    auto ready = [](std::uint16_t port, void*) {
      std::cout << "serving on 127.0.0.1:" << port << " (Ctrl-C to stop)" << std::endl;
    };
    sigfuzz_status st = sigfuzz_serve_udp(h.cfg, serve_port, ready, nullptr, &g_stop);
    return status_exit(st);
  }

  std::cout << app.help();
  return kExitError;
}
