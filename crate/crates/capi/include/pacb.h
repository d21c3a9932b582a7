#ifndef PACB_H
#define PACB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum PacbStatus {
  PacbStatus_Ok = 0,
  PacbStatus_ConfigError = 1,
  PacbStatus_Diverged = 2,
  PacbStatus_NullPointer = -1,
  PacbStatus_InvalidUtf8 = -2,
  PacbStatus_Panic = -3,
} PacbStatus;

/**
 * Opaque run configuration handle.
 */
typedef struct PacbConfig PacbConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pacb_version(void);

/**
 * Message of the last error on this thread, or NULL. Owned by the library;
 * do not free. Valid until the next failing call on the same thread.
 */
const char *pacb_last_error(void);

/**
 * Parse a JSON run configuration. Returns NULL on error (see
 * `pacb_last_error`).
 *
 * # Safety
 * `json` must be a valid NUL-terminated string or NULL.
 */
struct PacbConfig *pacb_config_parse(const char *json);

/**
 * Release a configuration handle. NULL is a no-op.
 *
 * # Safety
 * `config` must have been returned by `pacb_config_parse` and not yet freed.
 */
void pacb_config_free(struct PacbConfig *config);

/**
 * Release a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must have been returned by one of the `*_json`/`*_csv` calls and not
 * yet freed.
 */
void pacb_string_free(char *s);

/**
 * Assemble a certificate; `out` receives the certificate report JSON.
 * Returns `Diverged` (with the JSON still produced) when the complexity
 * term is infinite for the configuration.
 *
 * # Safety
 * `config` must be a live handle from `pacb_config_parse`; `out` must be a
 * valid pointer to a `char*`.
 */
enum PacbStatus pacb_certify_json(const struct PacbConfig *config, char **out);

/**
 * Coverage experiment; `out` receives the full run (report, psi, rows) as JSON.
 *
 * # Safety
 * As for [`pacb_certify_json`].
 */
enum PacbStatus pacb_coverage_json(const struct PacbConfig *config, char **out);

/**
 * Bound comparison table as JSON.
 *
 * # Safety
 * As for [`pacb_certify_json`].
 */
enum PacbStatus pacb_compare_json(const struct PacbConfig *config, char **out);

/**
 * Convergence or asymptote sweep as JSON.
 *
 * # Safety
 * As for [`pacb_certify_json`].
 */
enum PacbStatus pacb_sweep_json(const struct PacbConfig *config, char **out);

/**
 * Minimal-eigenvalue sequence as CSV (columns n,rho_n).
 *
 * # Safety
 * As for [`pacb_certify_json`].
 */
enum PacbStatus pacb_spectrum_csv(const struct PacbConfig *config, char **out);

/**
 * Sampled dataset as CSV (header x1,...,xd,y).
 *
 * # Safety
 * As for [`pacb_certify_json`].
 */
enum PacbStatus pacb_simulate_csv(const struct PacbConfig *config, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PACB_H */
