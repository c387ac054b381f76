#include "sigfuzz/sigfuzz.h"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "sigfuzz/campaign.hpp"
#include "sigfuzz/codec.hpp"
#include "sigfuzz/config.hpp"
#include "sigfuzz/errors.hpp"
#include "sigfuzz/metrics.hpp"
#include "sigfuzz/simulator.hpp"
#include "sigfuzz/udp.hpp"

struct sigfuzz_config {
  sigfuzz::RunConfig run;
  std::uint16_t udp_port = 0;
};

namespace {

namespace fs = std::filesystem;
using sigfuzz::RunConfig;

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

sigfuzz_status fail(sigfuzz_status st, const std::string& msg) {
  g_last_error = msg;
  return st;
}

template <class F>
sigfuzz_status guarded(F&& body) {
  try {
    g_last_error.clear();
    return body();
  } catch (const sigfuzz::ConfigError& e) {
    return fail(SIGFUZZ_E_CONFIG, e.what());
  } catch (const sigfuzz::TransportError& e) {
    return fail(SIGFUZZ_E_TRANSPORT, e.what());
  } catch (const sigfuzz::NoReachablePortError& e) {
    return fail(SIGFUZZ_E_TRANSPORT, e.what());
  } catch (const sigfuzz::SchemaError& e) {
    return fail(SIGFUZZ_E_CODEC, e.what());
  } catch (const sigfuzz::SizeError& e) {
    return fail(SIGFUZZ_E_CODEC, e.what());
  } catch (const sigfuzz::TruncatedError& e) {
    return fail(SIGFUZZ_E_CODEC, e.what());
  } catch (const sigfuzz::UnknownFieldError& e) {
    return fail(SIGFUZZ_E_CODEC, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(SIGFUZZ_E_IO, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(SIGFUZZ_E_INVALID, e.what());
  } catch (const std::exception& e) {
    return fail(SIGFUZZ_E_INTERNAL, e.what());
  } catch (...) {
    return fail(SIGFUZZ_E_INTERNAL, "unknown exception");
  }
}

// Owns whichever transport the configuration selects.
struct Target {
  Target(const sigfuzz_config& cfg, const fs::path& dump_dir) {
    if (cfg.udp_port != 0) {
      udp = std::make_unique<sigfuzz::UdpTransport>("127.0.0.1", cfg.udp_port);
    } else {
      sim = std::make_unique<sigfuzz::Simulator>(cfg.run.device, sigfuzz::TransitionTable::builtin(),
                                                 dump_dir);
      local = std::make_unique<sigfuzz::LocalTransport>(*sim);
    }
  }
  sigfuzz::Transport& transport() {
    return udp ? static_cast<sigfuzz::Transport&>(*udp) : *local;
  }

  std::unique_ptr<sigfuzz::Simulator> sim;
  std::unique_ptr<sigfuzz::LocalTransport> local;
  std::unique_ptr<sigfuzz::UdpTransport> udp;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw fs::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
  out << text;
  if (!out) throw fs::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
}

// Flushes each line so an aborted campaign leaves a readable partial log.
class FileSink final : public sigfuzz::JsonlSink {
 public:
  explicit FileSink(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw fs::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
  }
  void line(const std::string& text) override { out_ << text << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

}  // namespace

extern "C" {

const char* sigfuzz_version(void) { return "0.1.0"; }

const char* sigfuzz_last_error(void) { return g_last_error.c_str(); }

void sigfuzz_string_free(char* s) { std::free(s); }

sigfuzz_config* sigfuzz_config_new(void) {
  try {
    return new sigfuzz_config();
  } catch (...) {
    g_last_error = "out of memory";
    return nullptr;
  }
}

sigfuzz_status sigfuzz_config_load(const char* path, sigfuzz_config** out) {
  return guarded([&] {
    if (!path || !out) return fail(SIGFUZZ_E_INVALID, "null argument");
    auto cfg = std::make_unique<sigfuzz_config>();
    cfg->run = sigfuzz::load_run_config(path);
    *out = cfg.release();
    return SIGFUZZ_OK;
  });
}

sigfuzz_status sigfuzz_config_set(sigfuzz_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    if (!cfg || !key || !value) return fail(SIGFUZZ_E_INVALID, "null argument");
    RunConfig next = cfg->run;
    sigfuzz::apply_setting(next, key, value);
    next.validate();
    cfg->run = std::move(next);
    return SIGFUZZ_OK;
  });
}

sigfuzz_status sigfuzz_config_apply_env(sigfuzz_config* cfg) {
  return guarded([&] {
    if (!cfg) return fail(SIGFUZZ_E_INVALID, "null argument");
    RunConfig next = cfg->run;
    sigfuzz::apply_environment(next);
    next.validate();
    cfg->run = std::move(next);
    return SIGFUZZ_OK;
  });
}

void sigfuzz_config_free(sigfuzz_config* cfg) { delete cfg; }

sigfuzz_status sigfuzz_config_set_udp_target(sigfuzz_config* cfg, uint16_t udp_port) {
  if (!cfg) return fail(SIGFUZZ_E_INVALID, "null argument");
  cfg->udp_port = udp_port;
  return SIGFUZZ_OK;
}

sigfuzz_status sigfuzz_scan(const sigfuzz_config* cfg, char** report_json) {
  return guarded([&] {
    if (!cfg || !report_json) return fail(SIGFUZZ_E_INVALID, "null argument");
    Target target(*cfg, {});
    sigfuzz::SignalingSession session(target.transport(), sigfuzz::TransitionTable::builtin(),
                                      cfg->run.campaign.step_timeout);
    sigfuzz::ScanReport scan = sigfuzz::scan_target(session);
    *report_json = dup_string(sigfuzz::scan_json(scan));
    return SIGFUZZ_OK;
  });
}

sigfuzz_status sigfuzz_fuzz(const sigfuzz_config* cfg, const char* out_dir, char** summary_json) {
  return guarded([&] {
    if (!cfg || !out_dir) return fail(SIGFUZZ_E_INVALID, "null argument");
    fs::path out(out_dir);
    fs::create_directories(out / "dumps");
    sigfuzz::CampaignConfig campaign = cfg->run.campaign;
    campaign.dump_dir = out / "dumps";
    Target target(*cfg, campaign.dump_dir);

    sigfuzz::CampaignLog log;
    {
      FileSink sink(out / "packets.jsonl");
      log = sigfuzz::run_campaign(target.transport(), sigfuzz::TransitionTable::builtin(), campaign, &sink);
    }
    std::string summary = sigfuzz::summary_json(log, campaign);
    write_file(out / "summary.json", summary + "\n");
    write_file(out / "scan.json", sigfuzz::scan_json(log.scan) + "\n");
    if (summary_json) *summary_json = dup_string(summary);
    return log.vulnerabilities.empty() ? SIGFUZZ_OK : SIGFUZZ_FOUND;
  });
}

sigfuzz_status sigfuzz_replay(const sigfuzz_config* cfg, const char* log_line, const char* out_dir,
                              char** result_json) {
  return guarded([&] {
    if (!cfg || !log_line || !result_json) return fail(SIGFUZZ_E_INVALID, "null argument");
    sigfuzz::CampaignConfig campaign = cfg->run.campaign;
    if (out_dir) {
      campaign.dump_dir = fs::path(out_dir) / "dumps";
      fs::create_directories(campaign.dump_dir);
    }
    Target target(*cfg, campaign.dump_dir);
    sigfuzz::ReplayResult r =
        sigfuzz::replay(target.transport(), sigfuzz::TransitionTable::builtin(), log_line, campaign);
    *result_json = dup_string(sigfuzz::replay_json(r));
    if (!r.guide.reached) return fail(SIGFUZZ_E_TRANSPORT, "could not guide the target to the logged state");
    return r.verdict.severity == sigfuzz::Severity::None ? SIGFUZZ_OK : SIGFUZZ_FOUND;
  });
}

sigfuzz_status sigfuzz_report(const char* path, char** table) {
  return guarded([&] {
    if (!path || !table) return fail(SIGFUZZ_E_INVALID, "null argument");
    *table = dup_string(sigfuzz::format_report(sigfuzz::load_report(path)));
    return SIGFUZZ_OK;
  });
}

sigfuzz_status sigfuzz_table_dump(char** table) {
  return guarded([&] {
    if (!table) return fail(SIGFUZZ_E_INVALID, "null argument");
    *table = dup_string(sigfuzz::TransitionTable::builtin().dump());
    return SIGFUZZ_OK;
  });
}

sigfuzz_status sigfuzz_serve_udp(const sigfuzz_config* cfg, uint16_t port, sigfuzz_ready_fn on_ready,
                                 void* ctx, volatile int* stop) {
  return guarded([&] {
    if (!cfg || !stop) return fail(SIGFUZZ_E_INVALID, "null argument");
    sigfuzz::UdpShimServer server(cfg->run.device, port);
    server.start();
    if (on_ready) on_ready(server.port(), ctx);
    while (!*stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
    return SIGFUZZ_OK;
  });
}

sigfuzz_status sigfuzz_default_packet_hex(const char* command, char** hex) {
  return guarded([&] {
    if (!command || !hex) return fail(SIGFUZZ_E_INVALID, "null argument");
    auto kind = sigfuzz::parse_command(command);
    if (!kind) return fail(SIGFUZZ_E_INVALID, std::string("unknown command ") + command);
    *hex = dup_string(sigfuzz::to_hex(sigfuzz::encode(sigfuzz::default_packet(*kind))));
    return SIGFUZZ_OK;
  });
}

sigfuzz_status sigfuzz_decode_hex(const char* hex, char** packet_json) {
  return guarded([&] {
    if (!hex || !packet_json) return fail(SIGFUZZ_E_INVALID, "null argument");
    sigfuzz::L2capPacket p = sigfuzz::decode(sigfuzz::from_hex(hex));
    nlohmann::ordered_json fields = nlohmann::ordered_json::array();
    for (const auto& f : p.data_fields) {
      nlohmann::ordered_json j{{"name", sigfuzz::field_name(f.name)}};
      if (f.bytes.empty() && f.name != sigfuzz::FieldName::Opt && f.name != sigfuzz::FieldName::Data &&
          f.name != sigfuzz::FieldName::Raw) {
        j["value"] = f.value;
      } else {
        j["bytes"] = sigfuzz::to_hex(f.bytes);
      }
      fields.push_back(j);
    }
    nlohmann::ordered_json j{{"payload_length", p.payload_length},
                             {"header_cid", p.header_cid},
                             {"code", p.code}};
    if (auto k = p.kind()) j["command"] = sigfuzz::command_name(*k);
    j["identifier"] = p.identifier;
    j["data_length"] = p.data_length;
    j["fields"] = fields;
    j["garbage"] = sigfuzz::to_hex(p.garbage_tail);
    *packet_json = dup_string(j.dump());
    return SIGFUZZ_OK;
  });
}

double sigfuzz_mutation_efficiency(double mp_ratio, double pr_ratio) {
  return sigfuzz::mutation_efficiency(mp_ratio, pr_ratio);
}

}  // extern "C"
