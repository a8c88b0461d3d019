#ifndef COXPLORE_H
#define COXPLORE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CoxStatus {
  COX_STATUS_OK = 0,
  COX_STATUS_NULL_ARGUMENT = 1,
  COX_STATUS_PARSE = 2,
  COX_STATUS_INVALID_ARGUMENT = 3,
  COX_STATUS_INFEASIBLE = 4,
  COX_STATUS_SPACE_TOO_LARGE = 5,
  COX_STATUS_INTERNAL = 6,
} CoxStatus;

typedef struct CoxAccel CoxAccel;

typedef struct CoxConstants CoxConstants;

typedef struct CoxSubnet CoxSubnet;

typedef struct CoxTiling {
  uint32_t t_oc;
  uint32_t t_ic;
  uint32_t t_ow;
  uint32_t t_oh;
} CoxTiling;

typedef struct CoxCost {
  double energy_mj;
  double latency_ms;
  uint64_t cycles;
  uint64_t dram_bytes;
  double area_mm2;
} CoxCost;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Owned by the library.
 */
const char *cox_last_error(void);

/**
 * Library version as a static string.
 */
const char *cox_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void cox_string_free(char *s);

/**
 * Parse a workload document `{"operators": [...]}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CoxStatus cox_subnet_from_json(const char *json, struct CoxSubnet **out);

/**
 * # Safety
 * `s` must be null or a handle from [`cox_subnet_from_json`], not yet freed.
 */
void cox_subnet_free(struct CoxSubnet *s);

/**
 * Operator count, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live subnet handle.
 */
size_t cox_subnet_len(const struct CoxSubnet *s);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CoxStatus cox_accel_from_json(const char *json, struct CoxAccel **out);

/**
 * # Safety
 * `a` must be null or a handle from [`cox_accel_from_json`], not yet freed.
 */
void cox_accel_free(struct CoxAccel *a);

/**
 * Constants from JSON; a null `json` gives the defaults.
 *
 * # Safety
 * `json` must be null or NUL-terminated; `out` must be writable.
 */
enum CoxStatus cox_constants_new(const char *json, struct CoxConstants **out);

/**
 * # Safety
 * `c` must be null or a handle from [`cox_constants_new`], not yet freed.
 */
void cox_constants_free(struct CoxConstants *c);

/**
 * Cost of operator `op_index` under an explicit tiling.
 *
 * # Safety
 * All pointers must be live handles or writable structs.
 */
enum CoxStatus cox_estimate_cost(const struct CoxSubnet *subnet,
                                 size_t op_index,
                                 const struct CoxAccel *accel,
                                 const struct CoxTiling *tiling,
                                 const struct CoxConstants *constants,
                                 struct CoxCost *out);

/**
 * Best tiling of operator `op_index`, weighting energy and latency equally.
 *
 * # Safety
 * All pointers must be live handles or writable structs.
 */
enum CoxStatus cox_batch_search(const struct CoxSubnet *subnet,
                                size_t op_index,
                                const struct CoxAccel *accel,
                                const struct CoxConstants *constants,
                                struct CoxTiling *out_tiling,
                                struct CoxCost *out_cost);

/**
 * Total cost of the whole subnet with the best tiling per operator.
 *
 * # Safety
 * All pointers must be live handles or writable structs.
 */
enum CoxStatus cox_map_subnet(const struct CoxSubnet *subnet,
                              const struct CoxAccel *accel,
                              const struct CoxConstants *constants,
                              struct CoxCost *out);

/**
 * Weighted hardware cost; NaN for a null `cost`.
 *
 * # Safety
 * `cost` must be null or point to a valid struct.
 */
double cox_hw_cost(const struct CoxCost *cost, double lambda_e, double lambda_l, double lambda_a);

/**
 * Search accelerator configs for a subnet. `space_json` may be null for the
 * full space; `engine` is "anneal", "generator" or "exhaustive". On success
 * `*out_json` receives the chosen config as an accelerator document, to be
 * released with [`cox_string_free`].
 *
 * # Safety
 * Strings must be NUL-terminated; handles live; `out_json` writable.
 */
enum CoxStatus cox_search_accel(const struct CoxSubnet *subnet,
                                const char *space_json,
                                const struct CoxConstants *constants,
                                const char *engine,
                                uint64_t seed,
                                char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COXPLORE_H */
