#pragma once

#include <string>
#include <string_view>

#include "sigfuzz/campaign.hpp"
#include "sigfuzz/simulator.hpp"

namespace sigfuzz {

// Everything one run needs: the simulated device (with its seeded bugs) and
// the campaign settings. Loaded from one JSON document:
//
//   {
//     "device":   { "mac", "name", "device_class", "oui", "service_ports": [{"psm", "requires_pairing"}],
//                   "strictness", "mtu", "max_channels", "features": {"create_channel", "move_channel"} },
//     "bugs":     [ { "label", "job", "command", "predicate", "symptom", "signal" } ],
//     "mutation": { "packets_per_command", "mtu", "seed", "garbage_max",
//                   "psm_abnormal_ranges": [["0x0000", "0x0000"], ...], "psm_all_even", "cid_normal_range" },
//     "campaign": { "mode", "continue_after_reset", "states", "step_timeout_ms", "malformed_rule", "max_packets" }
//   }
//
// Every section and key is optional; omitted values keep the defaults of
// default_profile() and CampaignConfig. Numbers may be JSON integers or
// strings ("0x0019", "25").
struct RunConfig {
  DeviceProfile device = default_profile();
  CampaignConfig campaign;

  // Throws ConfigError.
  void validate() const;
};

RunConfig parse_run_config(std::string_view json_text);  // throws ConfigError
RunConfig load_run_config(const std::string& path);      // throws ConfigError

// Single-setting overrides used for command-line flags and the environment.
// Keys: seed, n-per-command, mtu, mode, continue-after-reset, states,
// malformed-rule, step-timeout-ms, max-packets, garbage-max, strictness.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

// Applies SIGFUZZ_SEED, SIGFUZZ_N_PER_COMMAND, ... for every key above that
// is set in the environment.
void apply_environment(RunConfig& config);

}  // namespace sigfuzz
