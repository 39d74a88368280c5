#ifndef AVERSEEK_H
#define AVERSEEK_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit-code contract (0 ok, 2 config,
 * 3 numerical), with FFI-specific argument errors on top.
 */
typedef enum AverseekStatus {
  AVERSEEK_STATUS_OK = 0,
  AVERSEEK_STATUS_CONFIG_ERROR = 2,
  AVERSEEK_STATUS_NUMERICAL_ERROR = 3,
  AVERSEEK_STATUS_NULL_POINTER = 4,
  AVERSEEK_STATUS_INVALID_ARGUMENT = 5,
  AVERSEEK_STATUS_PANIC = 6,
} AverseekStatus;

/**
 * Opaque scenario handle.
 */
typedef struct AverseekScenario AverseekScenario;

/**
 * Opaque result table: labelled columns of sampled values.
 */
typedef struct AverseekTable AverseekTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (query mode).
 */
uintptr_t averseek_last_error_message(char *buf, uintptr_t len);

/**
 * Parses a scenario from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AverseekStatus averseek_scenario_from_json(const char *json, struct AverseekScenario **out);

/**
 * Builds one of the built-in figure scenarios
 * ("fig2a", "fig2b", "fig3", "fig4-center", "fig4-right").
 *
 * # Safety
 * `figure_id` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AverseekStatus averseek_scenario_builtin(const char *figure_id, struct AverseekScenario **out);

/**
 * Runs the scenario and returns the sampled trajectory table.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum AverseekStatus averseek_scenario_run(const struct AverseekScenario *scenario,
                                          struct AverseekTable **out);

/**
 * Runs the scenario and writes its artifacts under `out_dir`.
 *
 * # Safety
 * `scenario` must be a live handle; `out_dir` a NUL-terminated path.
 */
enum AverseekStatus averseek_scenario_write(const struct AverseekScenario *scenario,
                                            const char *out_dir);

/**
 * # Safety
 * `scenario` must come from this library and not be freed twice.
 */
void averseek_scenario_free(struct AverseekScenario *scenario);

/**
 * # Safety
 * `table` must be a live handle (or null, a no-op).
 */
uintptr_t averseek_table_rows(const struct AverseekTable *table);

/**
 * # Safety
 * `table` must be a live handle (or null, a no-op).
 */
uintptr_t averseek_table_cols(const struct AverseekTable *table);

/**
 * Borrowed column label; valid while the table lives. Null when out of
 * range.
 *
 * # Safety
 * `table` must be a live handle.
 */
const char *averseek_table_column_name(const struct AverseekTable *table, uintptr_t col);

/**
 * Reads one cell; NaN on out-of-range indices.
 *
 * # Safety
 * `table` must be a live handle.
 */
double averseek_table_value(const struct AverseekTable *table, uintptr_t row, uintptr_t col);

/**
 * Copies one column into a caller buffer of `len` doubles; `len` must be at
 * least the row count.
 *
 * # Safety
 * `table` must be a live handle and `dst` must point to `len` doubles.
 */
enum AverseekStatus averseek_table_copy_column(const struct AverseekTable *table,
                                               uintptr_t col,
                                               double *dst,
                                               uintptr_t len);

/**
 * # Safety
 * `table` must come from this library and not be freed twice.
 */
void averseek_table_free(struct AverseekTable *table);

/**
 * Steady-state output of the scalar demonstration problem.
 */
double averseek_demo_output(double theta);

/**
 * Semicircle-kernel average of the scalar demonstration output
 * (quadrature-backed). NaN on invalid radius.
 */
double averseek_demo_output_averaged(double a, double theta);

/**
 * Planar demonstration signal.
 */
double averseek_demo_signal(double x, double y);

/**
 * Disk average of the planar demonstration signal.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AverseekStatus averseek_demo_signal_averaged(double a, double x, double y, double *out);

/**
 * Runs the identity-check battery with the given threshold multiplier.
 * Writes the number of failed checks to `failed` when non-null.
 *
 * # Safety
 * `failed` must be null or a valid pointer.
 */
enum AverseekStatus averseek_verify(double tol_scale, uintptr_t *failed);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* AVERSEEK_H */
