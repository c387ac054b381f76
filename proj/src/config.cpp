#include "sigfuzz/config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

using json = nlohmann::json;

namespace {

constexpr const char* kSettingKeys[] = {
    "seed",         "n-per-command",   "mtu",         "mode",        "continue-after-reset",
    "states",       "malformed-rule",  "step-timeout-ms", "max-packets", "garbage-max",
    "strictness"};

std::uint64_t parse_number_text(std::string_view text, const std::string& what) {
  std::string s(text);
  if (s.empty()) throw ConfigError(what + ": empty number");
  int base = 10;
  std::size_t start = 0;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    start = 2;
  }
  for (std::size_t i = start; i < s.size(); ++i) {
    if (!(base == 16 ? std::isxdigit(static_cast<unsigned char>(s[i]))
                     : std::isdigit(static_cast<unsigned char>(s[i])))) {
      throw ConfigError(what + ": \"" + s + "\" is not a number");
    }
  }
  errno = 0;
  unsigned long long v = std::strtoull(s.c_str() + start, nullptr, base);
  if (errno == ERANGE) throw ConfigError(what + ": \"" + s + "\" is out of range");
  return v;
}

std::uint64_t number(const json& j, const std::string& what, std::uint64_t max = UINT64_MAX) {
  std::uint64_t v = 0;
  if (j.is_number_unsigned()) {
    v = j.get<std::uint64_t>();
  } else if (j.is_number_integer()) {
    if (j.get<std::int64_t>() < 0) throw ConfigError(what + " must not be negative");
    v = j.get<std::uint64_t>();
  } else if (j.is_string()) {
    v = parse_number_text(j.get<std::string>(), what);
  } else {
    throw ConfigError(what + " must be a number");
  }
  if (v > max) throw ConfigError(what + " is out of range");
  return v;
}

bool boolean(const json& j, const std::string& what) {
  if (!j.is_boolean()) throw ConfigError(what + " must be true or false");
  return j.get<bool>();
}

std::string text(const json& j, const std::string& what) {
  if (!j.is_string()) throw ConfigError(what + " must be a string");
  return j.get<std::string>();
}

bool parse_bool_text(std::string_view v, const std::string& what) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(what + ": expected true or false, got \"" + std::string(v) + "\"");
}

void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError("unknown key \"" + k + "\" in " + section);
    }
  }
}

Strictness parse_strictness(std::string_view v) {
  if (v == "strict") return Strictness::Strict;
  if (v == "lenient") return Strictness::Lenient;
  throw ConfigError("strictness must be \"strict\" or \"lenient\"");
}

MutationMode parse_mode(std::string_view v) {
  if (v == "core") return MutationMode::CoreField;
  if (v == "baseline") return MutationMode::Baseline;
  throw ConfigError("mode must be \"core\" or \"baseline\"");
}

MalformedRule parse_malformed_rule(std::string_view v) {
  if (v == "every-output") return MalformedRule::EveryOutput;
  if (v == "changed-bytes") return MalformedRule::ChangedBytes;
  throw ConfigError("malformed_rule must be \"every-output\" or \"changed-bytes\"");
}

U16Range range(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(what + " must be a [lo, hi] pair");
  U16Range r{static_cast<std::uint16_t>(number(j[0], what, 0xFFFF)),
             static_cast<std::uint16_t>(number(j[1], what, 0xFFFF))};
  if (r.lo > r.hi) throw ConfigError(what + ": lo exceeds hi");
  return r;
}

void parse_device(const json& d, DeviceProfile& p) {
  check_keys(d, "device", {"mac", "name", "device_class", "oui", "service_ports", "strictness",
                           "mtu", "max_channels", "features"});
  bool oui_given = d.contains("oui");
  if (d.contains("mac")) {
    try {
      p.mac = parse_mac(text(d["mac"], "device.mac"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("device.mac: ") + e.what());
    }
    if (!oui_given) p.oui = (std::uint32_t{p.mac[0]} << 16) | (std::uint32_t{p.mac[1]} << 8) | p.mac[2];
  }
  if (d.contains("name")) p.name = text(d["name"], "device.name");
  if (d.contains("device_class")) p.device_class = text(d["device_class"], "device.device_class");
  if (oui_given) p.oui = static_cast<std::uint32_t>(number(d["oui"], "device.oui", 0xFFFFFF));
  if (d.contains("service_ports")) {
    const json& ports = d["service_ports"];
    if (!ports.is_array()) throw ConfigError("device.service_ports must be an array");
    p.service_ports.clear();
    for (const auto& e : ports) {
      check_keys(e, "device.service_ports[]", {"psm", "requires_pairing"});
      if (!e.contains("psm")) throw ConfigError("device.service_ports[] needs a psm");
      ServicePort sp;
      sp.psm = static_cast<std::uint16_t>(number(e["psm"], "psm", 0xFFFF));
      if (e.contains("requires_pairing")) sp.requires_pairing = boolean(e["requires_pairing"], "requires_pairing");
      p.service_ports.push_back(sp);
    }
  }
  if (d.contains("strictness")) p.strictness = parse_strictness(text(d["strictness"], "device.strictness"));
  if (d.contains("mtu")) p.mtu = number(d["mtu"], "device.mtu", 0xFFFF);
  if (d.contains("max_channels")) p.max_channels = number(d["max_channels"], "device.max_channels", 0xFFFF);
  if (d.contains("features")) {
    const json& f = d["features"];
    check_keys(f, "device.features", {"create_channel", "move_channel"});
    if (f.contains("create_channel")) p.create_channel = boolean(f["create_channel"], "create_channel");
    if (f.contains("move_channel")) p.move_channel = boolean(f["move_channel"], "move_channel");
  }
}

BugProfile parse_bug(const json& b, std::size_t index) {
  std::string where = "bugs[" + std::to_string(index) + "]";
  check_keys(b, where, {"label", "job", "command", "predicate", "symptom", "signal"});
  for (const char* key : {"job", "command", "symptom"}) {
    if (!b.contains(key)) throw ConfigError(where + " needs \"" + key + "\"");
  }
  BugProfile bug;
  bug.label = b.contains("label") ? text(b["label"], where + ".label") : where;
  auto job = parse_job(text(b["job"], where + ".job"));
  if (!job) throw ConfigError(where + ": unknown job \"" + b["job"].get<std::string>() + "\"");
  bug.trigger_job = *job;
  auto cmd = parse_command(text(b["command"], where + ".command"));
  if (!cmd) throw ConfigError(where + ": unknown command \"" + b["command"].get<std::string>() + "\"");
  bug.trigger_command = *cmd;
  if (b.contains("predicate")) bug.predicate = FieldPredicate::parse(text(b["predicate"], where + ".predicate"));
  auto sym = parse_symptom(text(b["symptom"], where + ".symptom"));
  if (!sym) throw ConfigError(where + ": symptom must be DoS or Crash");
  bug.symptom = *sym;
  if (b.contains("signal")) {
    auto sig = parse_crash_signal(text(b["signal"], where + ".signal"));
    if (!sig) throw ConfigError(where + ": signal must be Reset, Aborted, Refused or Timeout");
    bug.crash_signal = *sig;
  }
  return bug;
}

void parse_mutation(const json& m, MutationConfig& c) {
  check_keys(m, "mutation", {"packets_per_command", "mtu", "seed", "garbage_max",
                             "psm_abnormal_ranges", "psm_all_even", "cid_normal_range"});
  if (m.contains("packets_per_command")) c.packets_per_command = number(m["packets_per_command"], "packets_per_command");
  if (m.contains("mtu")) c.mtu = number(m["mtu"], "mutation.mtu", 0xFFFF);
  if (m.contains("seed")) c.seed = number(m["seed"], "seed");
  if (m.contains("garbage_max")) c.garbage_max = number(m["garbage_max"], "garbage_max", 0xFFFF);
  if (m.contains("psm_abnormal_ranges")) {
    if (!m["psm_abnormal_ranges"].is_array()) throw ConfigError("psm_abnormal_ranges must be an array");
    c.psm_abnormal_ranges.clear();
    for (const auto& r : m["psm_abnormal_ranges"]) c.psm_abnormal_ranges.push_back(range(r, "psm_abnormal_ranges"));
  }
  if (m.contains("psm_all_even")) c.psm_all_even = boolean(m["psm_all_even"], "psm_all_even");
  if (m.contains("cid_normal_range")) c.cid_normal_range = range(m["cid_normal_range"], "cid_normal_range");
}

void parse_campaign(const json& j, CampaignConfig& c) {
  check_keys(j, "campaign", {"mode", "continue_after_reset", "states", "step_timeout_ms",
                             "malformed_rule", "max_packets"});
  if (j.contains("mode")) c.mode = parse_mode(text(j["mode"], "campaign.mode"));
  if (j.contains("continue_after_reset")) c.continue_after_reset = boolean(j["continue_after_reset"], "continue_after_reset");
  if (j.contains("states")) c.states = StateFilter::parse(text(j["states"], "campaign.states"));
  if (j.contains("step_timeout_ms")) {
    c.step_timeout = std::chrono::milliseconds(number(j["step_timeout_ms"], "step_timeout_ms", 600000));
  }
  if (j.contains("malformed_rule")) c.malformed_rule = parse_malformed_rule(text(j["malformed_rule"], "malformed_rule"));
  if (j.contains("max_packets")) c.max_packets = number(j["max_packets"], "max_packets");
}

}  // namespace

void RunConfig::validate() const {
  device.validate();
  campaign.validate();
}

RunConfig parse_run_config(std::string_view json_text) {
  json root = json::parse(json_text, nullptr, false, /*ignore_comments=*/true);
  if (root.is_discarded()) throw ConfigError("config is not valid JSON");
  check_keys(root, "config", {"device", "bugs", "mutation", "campaign"});
  RunConfig rc;
  if (root.contains("device")) parse_device(root["device"], rc.device);
  if (root.contains("bugs")) {
    if (!root["bugs"].is_array()) throw ConfigError("bugs must be an array");
    std::size_t i = 0;
    for (const auto& b : root["bugs"]) rc.device.bugs.push_back(parse_bug(b, i++));
  }
  if (root.contains("mutation")) parse_mutation(root["mutation"], rc.campaign.mutation);
  if (root.contains("campaign")) parse_campaign(root["campaign"], rc.campaign);
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  CampaignConfig& c = config.campaign;
  std::string k(key);
  if (k == "seed") {
    c.mutation.seed = parse_number_text(value, k);
  } else if (k == "n-per-command") {
    c.mutation.packets_per_command = parse_number_text(value, k);
  } else if (k == "mtu") {
    c.mutation.mtu = parse_number_text(value, k);
  } else if (k == "mode") {
    c.mode = parse_mode(value);
  } else if (k == "continue-after-reset") {
    c.continue_after_reset = parse_bool_text(value, k);
  } else if (k == "states") {
    c.states = StateFilter::parse(value);
  } else if (k == "malformed-rule") {
    c.malformed_rule = parse_malformed_rule(value);
  } else if (k == "step-timeout-ms") {
    c.step_timeout = std::chrono::milliseconds(parse_number_text(value, k));
  } else if (k == "max-packets") {
    c.max_packets = parse_number_text(value, k);
  } else if (k == "garbage-max") {
    c.mutation.garbage_max = parse_number_text(value, k);
  } else if (k == "strictness") {
    config.device.strictness = parse_strictness(value);
  } else {
    throw ConfigError("unknown setting \"" + k + "\"");
  }
}

void apply_environment(RunConfig& config) {
  for (const char* key : kSettingKeys) {
    std::string var = "SIGFUZZ_";
    for (const char* p = key; *p; ++p) {
      var += *p == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
    }
    if (const char* v = std::getenv(var.c_str())) apply_setting(config, key, v);
  }
}

}  // namespace sigfuzz
