#ifndef FEDCAL_H
#define FEDCAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedcalStatus {
  FEDCAL_STATUS_OK = 0,
  FEDCAL_STATUS_INVALID_ARGUMENT = 1,
  FEDCAL_STATUS_RESOURCE_LIMIT = 2,
  FEDCAL_STATUS_INFEASIBLE = 3,
  FEDCAL_STATUS_INTERNAL = 4,
  FEDCAL_STATUS_PROTOCOL_VIOLATION = 5,
  FEDCAL_STATUS_PARSE = 6,
  FEDCAL_STATUS_IO = 7,
  FEDCAL_STATUS_NULL_POINTER = 8,
  FEDCAL_STATUS_PANIC = 9,
} FedcalStatus;

/**
 * Opaque coverage table for one `(m, n)`.
 */
typedef struct FedcalTable FedcalTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the next call.
 */
const char *fedcal_last_error(void);

/**
 * Create an empty table for `m` agents with `n` scores each.
 *
 * # Safety
 * `out_table` must be a valid pointer. Release the result with [`fedcal_table_free`].
 */
enum FedcalStatus fedcal_table_new(size_t m, size_t n, struct FedcalTable **out_table);

/**
 * Load a table written by [`fedcal_table_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_table` a valid pointer.
 */
enum FedcalStatus fedcal_table_load(const char *path, struct FedcalTable **out_table);

/**
 * # Safety
 * `table` must come from this library; `path` must be a NUL-terminated string.
 */
enum FedcalStatus fedcal_table_save(const struct FedcalTable *table, const char *path);

/**
 * Destroy a table. Null is ignored.
 *
 * # Safety
 * `table` must come from this library and not be used afterwards.
 */
void fedcal_table_free(struct FedcalTable *table);

/**
 * Coverage `M_{l,k}`, evaluated and cached on demand.
 *
 * # Safety
 * `table` must come from this library and `out_coverage` must be valid.
 */
enum FedcalStatus fedcal_table_entry(struct FedcalTable *table,
                                     size_t l,
                                     size_t k,
                                     double *out_coverage);

/**
 * Pick `(l*, k*)` for miscoverage `alpha`.
 *
 * # Safety
 * `table` must come from this library; output pointers must be valid.
 */
enum FedcalStatus fedcal_table_select(struct FedcalTable *table,
                                      double alpha,
                                      size_t *out_l,
                                      size_t *out_k,
                                      double *out_coverage);

/**
 * Calibrate from `m * n` scores laid out agent by agent.
 *
 * `table` may be null; otherwise it must match `(m, n)` and is filled as a side effect.
 * `out_q_hat` is `+inf` when no finite threshold gives the target coverage.
 *
 * # Safety
 * `scores` must point to `m * n` doubles; output pointers must be valid.
 */
enum FedcalStatus fedcal_calibrate_qq(const double *scores,
                                      size_t m,
                                      size_t n,
                                      double alpha,
                                      struct FedcalTable *table,
                                      double *out_q_hat,
                                      size_t *out_l,
                                      size_t *out_k,
                                      double *out_coverage);

/**
 * Rank correction for private local quantiles.
 *
 * # Safety
 * `out_l_cor` must be valid.
 */
enum FedcalStatus fedcal_l_cor(double epsilon,
                               size_t bins,
                               size_t m,
                               double gamma_alpha,
                               size_t *out_l_cor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCAL_H */
