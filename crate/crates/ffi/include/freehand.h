#ifndef FREEHAND_H
#define FREEHAND_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FhStatus {
  FH_STATUS_OK = 0,
  FH_STATUS_NULL_ARGUMENT = 1,
  FH_STATUS_INVALID_UTF8 = 2,
  // Malformed JSON or parameters rejected by validation.
  FH_STATUS_INVALID_ARGUMENT = 3,
  // The computation itself failed (enumeration cap, non-convergence, ...).
  FH_STATUS_RUNTIME = 4,
  FH_STATUS_PANIC = 5,
} FhStatus;

// A trajectory-comparison dataset.
typedef struct FhDataset FhDataset;

// An instance with its data laws and comparator policy.
typedef struct FhInstance FhInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// owned by the library and valid until the next failing call.
const char *fh_last_error(void);

// Library version as a static NUL-terminated string.
const char *fh_version(void);

// # Safety
// `s` must come from this library and not have been freed.
void fh_string_free(char *s);

// Builds an instance from an instance-spec JSON object (the `instance`
// field of an experiment config).
//
// # Safety
// `spec_json` must be a NUL-terminated string; `out` must be writable.
enum FhStatus fh_instance_from_json(const char *spec_json, struct FhInstance **out);

// # Safety
// `inst` must come from [`fh_instance_from_json`] and not have been freed.
void fh_instance_free(struct FhInstance *inst);

// # Safety
// `inst` must be a live handle; the out pointers must be writable.
enum FhStatus fh_instance_dims(const struct FhInstance *inst,
                               size_t *horizon,
                               size_t *states,
                               size_t *actions);

// Per-step and per-trajectory concentrability of the comparator policy
// against the instance's first data law.
//
// # Safety
// `inst` must be a live handle; the out pointers must be writable.
enum FhStatus fh_instance_coefficients(const struct FhInstance *inst, double *c_st, double *c_tr);

// Samples the dataset of sweep cell `(n, seed)` under the sigmoid link.
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum FhStatus fh_dataset_generate(const struct FhInstance *inst,
                                  size_t n,
                                  uint64_t seed,
                                  struct FhDataset **out);

// # Safety
// `ds` must come from [`fh_dataset_generate`] and not have been freed.
void fh_dataset_free(struct FhDataset *ds);

// Number of records, or 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live handle.
size_t fh_dataset_len(const struct FhDataset *ds);

// The dataset in its text format; free with [`fh_string_free`].
//
// # Safety
// `ds` must be a live handle; `out` must be writable.
enum FhStatus fh_dataset_to_text(const struct FhDataset *ds, char **out);

// `C_st` and `C_tr` of the constructed instance with a uniform chain and
// uniform target.
//
// # Safety
// The out pointers must be writable.
enum FhStatus fh_prop2_coefficients(size_t states,
                                    size_t actions,
                                    size_t horizon,
                                    double c,
                                    double *c_st,
                                    double *c_tr);

// Exact KL between the two label laws of a hard pair and the closed-form
// bound it must respect. `kind` is 0 for per-step, 1 for per-trajectory.
//
// # Safety
// The out pointers must be writable.
enum FhStatus fh_lower_bound_kl(uint32_t kind,
                                double c,
                                size_t horizon,
                                size_t n,
                                double *kl,
                                double *bound);

// Sigmoid `κ = 1 / min Φ'` over reward differences in `[-bound, bound]`.
//
// # Safety
// `out` must be writable.
enum FhStatus fh_kappa_sigmoid(double bound, double *out);

// Runs an experiment config (JSON) and returns the results CSV.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out_csv` must be
// writable. Free the result with [`fh_string_free`].
enum FhStatus fh_run_experiment(const char *config_json, char **out_csv);

// Log-log least squares of per-`N` means of `(ns[i], values[i])`.
//
// # Safety
// `ns` and `values` must point to `len` readable elements; the out
// pointers must be writable.
enum FhStatus fh_fit_rate(const size_t *ns,
                          const double *values,
                          size_t len,
                          double *slope,
                          double *intercept,
                          double *r_squared);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FREEHAND_H */
