/* C interface to the sigfuzz core. All strings returned through char** out
 * parameters are heap allocated and released with sigfuzz_string_free. Errors
 * leave a message readable with sigfuzz_last_error (per thread). */
#ifndef SIGFUZZ_SIGFUZZ_H
#define SIGFUZZ_SIGFUZZ_H

#include <stddef.h>
#include <stdint.h>

#if defined(SIGFUZZ_BUILDING)
#define SIGFUZZ_API __attribute__((visibility("default")))
#else
#define SIGFUZZ_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sigfuzz_status {
  SIGFUZZ_OK = 0,
  SIGFUZZ_FOUND = 1, /* campaign or replay reproduced a vulnerability */
  SIGFUZZ_E_CONFIG = 2,
  SIGFUZZ_E_TRANSPORT = 3,
  SIGFUZZ_E_INVALID = 4, /* bad argument (null pointer, unknown name) */
  SIGFUZZ_E_IO = 5,
  SIGFUZZ_E_CODEC = 6,
  SIGFUZZ_E_INTERNAL = 7
} sigfuzz_status;

typedef struct sigfuzz_config sigfuzz_config;

SIGFUZZ_API const char* sigfuzz_version(void);
SIGFUZZ_API const char* sigfuzz_last_error(void);
SIGFUZZ_API void sigfuzz_string_free(char* s);

/* Defaults: the built-in strict device, no bugs, seed 0. */
SIGFUZZ_API sigfuzz_config* sigfuzz_config_new(void);
/* Loads a JSON run configuration from path. */
SIGFUZZ_API sigfuzz_status sigfuzz_config_load(const char* path, sigfuzz_config** out);
/* Overrides one setting ("seed", "mode", "states", ...). */
SIGFUZZ_API sigfuzz_status sigfuzz_config_set(sigfuzz_config* cfg, const char* key, const char* value);
/* Applies SIGFUZZ_* environment variables. */
SIGFUZZ_API sigfuzz_status sigfuzz_config_apply_env(sigfuzz_config* cfg);
SIGFUZZ_API void sigfuzz_config_free(sigfuzz_config* cfg);

/* Simulated target selection. udp_port 0 runs the simulator in process;
 * otherwise the campaign talks to a shim listening on 127.0.0.1:udp_port. */
SIGFUZZ_API sigfuzz_status sigfuzz_config_set_udp_target(sigfuzz_config* cfg, uint16_t udp_port);

/* Scan report as JSON. */
SIGFUZZ_API sigfuzz_status sigfuzz_scan(const sigfuzz_config* cfg, char** report_json);

/* Runs a campaign. Writes packets.jsonl, summary.json and scan.json into
 * out_dir (created if missing) and crash dumps into out_dir/dumps. Returns
 * SIGFUZZ_FOUND when at least one vulnerability was recorded. summary_json may
 * be NULL. */
SIGFUZZ_API sigfuzz_status sigfuzz_fuzz(const sigfuzz_config* cfg, const char* out_dir,
                                        char** summary_json);

/* Re-sends one logged packet or vulnerability line. out_dir receives dumps. */
SIGFUZZ_API sigfuzz_status sigfuzz_replay(const sigfuzz_config* cfg, const char* log_line,
                                          const char* out_dir, char** result_json);

/* Metrics table for a log file, summary file or output directory. */
SIGFUZZ_API sigfuzz_status sigfuzz_report(const char* path, char** table);

/* The transition table in its text format. */
SIGFUZZ_API sigfuzz_status sigfuzz_table_dump(char** table);

/* Serves the configured device over UDP until *stop becomes nonzero.
 * on_ready (may be NULL) receives the bound port once serving starts. */
typedef void (*sigfuzz_ready_fn)(uint16_t bound_port, void* ctx);
SIGFUZZ_API sigfuzz_status sigfuzz_serve_udp(const sigfuzz_config* cfg, uint16_t port,
                                             sigfuzz_ready_fn on_ready, void* ctx,
                                             volatile int* stop);

/* Codec helpers over hex strings ("08 00 01 00 ..."). */
SIGFUZZ_API sigfuzz_status sigfuzz_default_packet_hex(const char* command, char** hex);
SIGFUZZ_API sigfuzz_status sigfuzz_decode_hex(const char* hex, char** packet_json);

/* MP * (1 - PR). */
SIGFUZZ_API double sigfuzz_mutation_efficiency(double mp_ratio, double pr_ratio);

#ifdef __cplusplus
}
#endif

#endif
