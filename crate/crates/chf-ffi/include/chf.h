#ifndef CHF_H
#define CHF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define CHF_OK 0

#define CHF_ERR_DIVERGED 2

#define CHF_ERR_CONFIG 3

#define CHF_ERR_SOLVER 4

/**
 * Parsed run configuration.
 */
typedef struct ChfConfig ChfConfig;

/**
 * A stepping simulation: one flow state plus its grid and parameters.
 */
typedef struct ChfSim ChfSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the most recent error message on this thread into `buf` (NUL
 * terminated, truncated to `cap` bytes) and return the full message length.
 * A `buf` of NULL or `cap` of 0 just returns the length.
 *
 * # Safety
 * `buf`, when non-NULL, must point to at least `cap` writable bytes.
 */
uintptr_t chf_last_error(char *buf, uintptr_t cap);

/**
 * Load a configuration file. Returns NULL on failure (see `chf_last_error`).
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
struct ChfConfig *chf_config_load(const char *path);

/**
 * Parse a configuration from text instead of a file. Returns NULL on failure.
 *
 * # Safety
 * `text` must be a NUL-terminated string.
 */
struct ChfConfig *chf_config_parse(const char *text);

/**
 * Apply one `key = value` override (key as on the command line, e.g. "dt" or
 * "params.dt"). The whole configuration is revalidated.
 *
 * # Safety
 * `cfg` must be a live handle from `chf_config_load`/`chf_config_parse`;
 * `key` and `value` must be NUL-terminated strings.
 */
int32_t chf_config_override(struct ChfConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be NULL or a live handle; it is invalid after this call.
 */
void chf_config_free(struct ChfConfig *cfg);

/**
 * Create a simulation positioned at t = 0 with the configured scenario.
 * Returns NULL on failure.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
struct ChfSim *chf_sim_new(const struct ChfConfig *cfg);

/**
 * Advance the simulation by `n` time steps of the configured dt.
 *
 * # Safety
 * `sim` must be a live handle from `chf_sim_new`.
 */
int32_t chf_sim_step(struct ChfSim *sim, uint64_t n);

/**
 * Current simulation time; NaN for a NULL handle.
 *
 * # Safety
 * `sim` must be NULL or a live handle.
 */
double chf_sim_time(const struct ChfSim *sim);

/**
 * Dirichlet energy of the current map; NaN for a NULL handle.
 *
 * # Safety
 * `sim` must be NULL or a live handle.
 */
double chf_sim_energy(const struct ChfSim *sim);

/**
 * Volume of the evolving metric; NaN for a NULL handle.
 *
 * # Safety
 * `sim` must be NULL or a live handle.
 */
double chf_sim_volume(const struct ChfSim *sim);

/**
 * # Safety
 * `sim` must be NULL or a live handle; it is invalid after this call.
 */
void chf_sim_free(struct ChfSim *sim);

/**
 * Run the full experiment for this configuration, writing artifacts to the
 * configured output directory. Returns 0, or 2 if the run diverged (partial
 * artifacts are kept), or an error status.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
int32_t chf_run_experiment(const struct ChfConfig *cfg);

/**
 * Run the conformal-vs-classic comparison for this configuration.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
int32_t chf_compare_baseline(const struct ChfConfig *cfg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHF_H */
