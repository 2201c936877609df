#ifndef KOOPMAN_PG_H
#define KOOPMAN_PG_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every exported function.
typedef enum KpgStatus {
  KPG_STATUS_OK = 0,
  KPG_STATUS_NULL_POINTER = 1,
  KPG_STATUS_INVALID_INPUT = 2,
  KPG_STATUS_CONFIG = 3,
  KPG_STATUS_NUMERICAL = 4,
  KPG_STATUS_RANK_DEFICIENT = 5,
  KPG_STATUS_INSUFFICIENT_DATA = 6,
  KPG_STATUS_IO = 7,
  KPG_STATUS_PARSE = 8,
  KPG_STATUS_PANIC = 9,
} KpgStatus;

// Trained lifting, critic and actor.
typedef struct KpgAgent KpgAgent;

// Training configuration handle.
typedef struct KpgConfig KpgConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *kpg_version(void);

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *kpg_last_error_message(void);

// Parses `key=value` configuration text (NUL-terminated). An empty string
// yields the defaults.
//
// # Safety
// `text` must be a valid C string and `out` a valid pointer.
enum KpgStatus kpg_config_parse(const char *text, struct KpgConfig **out);

// Sets one key and re-validates the whole configuration; on failure the
// handle is left unchanged.
//
// # Safety
// `config` must come from [`kpg_config_parse`]; `key`, `value` valid C strings.
enum KpgStatus kpg_config_set(struct KpgConfig *config, const char *key, const char *value);

// # Safety
// `config` must come from [`kpg_config_parse`] or be null.
void kpg_config_free(struct KpgConfig *config);

// Runs training to completion and returns the trained agent.
//
// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum KpgStatus kpg_train(const struct KpgConfig *config, struct KpgAgent **out);

// Writes the agent's checkpoint directory.
//
// # Safety
// `agent` must be a live handle and `dir` a valid C string.
enum KpgStatus kpg_agent_save(const struct KpgAgent *agent, const char *dir);

// # Safety
// `dir` must be a valid C string and `out` a valid pointer.
enum KpgStatus kpg_agent_load(const char *dir, struct KpgAgent **out);

// State dimension `n`, action dimension `m` and lifted dimension `r`.
// Any output pointer may be null.
//
// # Safety
// `agent` must be a live handle.
enum KpgStatus kpg_agent_dims(const struct KpgAgent *agent,
                              uintptr_t *state_dim,
                              uintptr_t *action_dim,
                              uintptr_t *lifted_dim);

// `u = μ(x)`.
//
// # Safety
// `x` must hold `n` doubles and `u` room for `m`.
enum KpgStatus kpg_agent_act(const struct KpgAgent *agent,
                             const double *x,
                             uintptr_t n,
                             double *u,
                             uintptr_t m);

// One-step surrogate prediction `C (A g(x) + B u)` into `x_next` (length `n`).
//
// # Safety
// Buffers must hold the stated number of doubles.
enum KpgStatus kpg_agent_predict(const struct KpgAgent *agent,
                                 const double *x,
                                 uintptr_t n,
                                 const double *u,
                                 uintptr_t m,
                                 double *x_next);

// Critic value `Ĵ(x)`.
//
// # Safety
// `x` must hold `n` doubles; `value` must be valid.
enum KpgStatus kpg_agent_value(const struct KpgAgent *agent,
                               const double *x,
                               uintptr_t n,
                               double *value);

// Noise-free evaluation in the agent's environment. Either output may be null.
//
// # Safety
// `agent` must be a live handle.
enum KpgStatus kpg_agent_evaluate(const struct KpgAgent *agent,
                                  uintptr_t episodes,
                                  uint64_t seed,
                                  double *mean_step_cost,
                                  double *mean_discounted_cost);

// # Safety
// `agent` must come from this library or be null.
void kpg_agent_free(struct KpgAgent *agent);

// Discounted LQR: `a` is n×n, `b` n×m, `q` n×n, `r` m×m (row-major). Writes
// the gain `K` (m×n, `u = −K x`) and the cost-to-go `P` (n×n); `p` may be null.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum KpgStatus kpg_lqr(const double *a,
                       const double *b,
                       const double *q,
                       const double *r,
                       uintptr_t n,
                       uintptr_t m,
                       double gamma,
                       uintptr_t max_iters,
                       double *gain,
                       double *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KOOPMAN_PG_H */
