#ifndef DEMO2PROG_H
#define DEMO2PROG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum D2pStatus {
  D2P_STATUS_OK = 0,
  D2P_STATUS_NULL_POINTER = 1,
  D2P_STATUS_INVALID_ARGUMENT = 2,
  D2P_STATUS_CONFIG = 3,
  D2P_STATUS_MISSING_INPUT = 4,
  D2P_STATUS_NUMERIC = 5,
  D2P_STATUS_GROUNDING = 6,
  D2P_STATUS_FORMAT = 7,
  D2P_STATUS_IO = 8,
  D2P_STATUS_SYNTAX = 9,
  /**
   * The caller's buffer is too short; the required length was written.
   */
  D2P_STATUS_BUFFER_TOO_SMALL = 10,
  D2P_STATUS_PANIC = 11,
} D2pStatus;

typedef struct D2pConfig D2pConfig;

typedef struct D2pDemo D2pDemo;

typedef struct D2pLibrary D2pLibrary;

typedef struct D2pNet D2pNet;

typedef struct D2pProgram D2pProgram;

typedef struct D2pTrace D2pTrace;

/**
 * Summary of an N_eff series.
 */
typedef struct D2pStats {
  double mean;
  double max;
  double min;
  double iqr;
} D2pStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *d2p_version(void);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *d2p_last_error(void);

void d2p_string_free(char *s);

enum D2pStatus d2p_config_default(struct D2pConfig **out);

enum D2pStatus d2p_config_from_json(const char *json, struct D2pConfig **out);

enum D2pStatus d2p_config_load(const char *path, struct D2pConfig **out);

enum D2pStatus d2p_config_to_json(const struct D2pConfig *cfg, char **out);

enum D2pStatus d2p_config_set_seed(struct D2pConfig *cfg, uint64_t seed);

void d2p_config_free(struct D2pConfig *cfg);

/**
 * Generates the configured demonstration.
 */
enum D2pStatus d2p_demo_generate(const struct D2pConfig *cfg, struct D2pDemo **out);

enum D2pStatus d2p_demo_load(const char *dir, struct D2pDemo **out);

enum D2pStatus d2p_demo_save(const struct D2pDemo *demo, const char *dir);

enum D2pStatus d2p_demo_len(const struct D2pDemo *demo, size_t *out);

void d2p_demo_free(struct D2pDemo *demo);

/**
 * Trains the visuomotor network; `final_loss` may be null.
 */
enum D2pStatus d2p_net_train(const struct D2pConfig *cfg,
                             const struct D2pDemo *demo,
                             struct D2pNet **out,
                             double *final_loss);

enum D2pStatus d2p_net_load(const char *path, struct D2pNet **out);

enum D2pStatus d2p_net_save(const struct D2pNet *net, const char *path);

void d2p_net_free(struct D2pNet *net);

/**
 * Runs the particle filter. With a network the attribution prior is used,
 * with a null `net` the baseline prior. `rep` selects the inference seed.
 */
enum D2pStatus d2p_infer(const struct D2pConfig *cfg,
                         const struct D2pDemo *demo,
                         const struct D2pNet *net,
                         uint64_t rep,
                         struct D2pTrace **out);

enum D2pStatus d2p_trace_len(const struct D2pTrace *trace, size_t *out);

enum D2pStatus d2p_trace_n_eff(const struct D2pTrace *trace,
                               double *buf,
                               size_t cap,
                               size_t *out_len);

enum D2pStatus d2p_trace_stats(const struct D2pTrace *trace, struct D2pStats *out);

void d2p_trace_free(struct D2pTrace *trace);

/**
 * Symbolizes an inference trace and compresses the symbols into a program.
 * Either output may be null when it is not needed.
 */
enum D2pStatus d2p_induce(const struct D2pConfig *cfg,
                          const struct D2pTrace *trace,
                          struct D2pProgram **out_program,
                          struct D2pLibrary **out_library);

enum D2pStatus d2p_program_parse(const char *source, struct D2pProgram **out);

/**
 * Compresses a symbol trace into loops, palindromes and plain steps.
 */
enum D2pStatus d2p_program_from_symbols(const uint32_t *symbols,
                                        size_t len,
                                        struct D2pProgram **out);

enum D2pStatus d2p_program_expand(const struct D2pProgram *program,
                                  uint32_t *buf,
                                  size_t cap,
                                  size_t *out_len);

enum D2pStatus d2p_program_to_dsl(const struct D2pProgram *program, char **out);

void d2p_program_free(struct D2pProgram *program);

enum D2pStatus d2p_library_len(const struct D2pLibrary *library, size_t *out);

enum D2pStatus d2p_library_goal(const struct D2pLibrary *library,
                                uint32_t id,
                                double *buf,
                                size_t cap,
                                size_t *out_len);

enum D2pStatus d2p_library_gain(const struct D2pLibrary *library, uint32_t id, double *out);

void d2p_library_free(struct D2pLibrary *library);

/**
 * `1 / Σ w²` of normalized weights.
 */
enum D2pStatus d2p_effective_sample_size(const double *weights, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEMO2PROG_H */
