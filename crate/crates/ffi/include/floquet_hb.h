#ifndef FLOQUET_HB_H
#define FLOQUET_HB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum FhbStatus {
  FHB_STATUS_OK = 0,
  FHB_STATUS_NULL_POINTER = 1,
  FHB_STATUS_INVALID_UTF8 = 2,
  FHB_STATUS_CONFIG = 3,
  FHB_STATUS_SOLVER = 4,
  FHB_STATUS_IO = 5,
  FHB_STATUS_BUFFER_TOO_SMALL = 6,
  FHB_STATUS_PANIC = 7,
} FhbStatus;

// Parsed and validated run configuration.
typedef struct FhbConfig FhbConfig;

// Converged forward harmonic-balance solution.
typedef struct FhbSolution FhbSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fhb_version(void);

// Message of the last failed call on this thread, or null.
//
// The pointer stays valid until the next call into the library on the
// same thread.
const char *fhb_last_error(void);

// Parses a TOML configuration.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum FhbStatus fhb_config_from_toml(const char *toml, struct FhbConfig **out);

// Reads and parses a TOML configuration file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FhbStatus fhb_config_load(const char *path, struct FhbConfig **out);

// Releases a configuration; null is ignored.
//
// # Safety
// `cfg` must be null or a handle from this library not yet freed.
void fhb_config_free(struct FhbConfig *cfg);

// Runs an experiment (`forward`, `engineer`, `sweep`, `compare-magnus`,
// `verify`) and writes its artifacts and manifest into `out_dir`.
//
// # Safety
// `cfg` must be a live handle; the strings must be NUL-terminated.
enum FhbStatus fhb_run(const struct FhbConfig *cfg, const char *experiment, const char *out_dir);

// Forward NEFS solve of the configured model at `initial.a01`.
//
// # Safety
// `cfg` must be a live handle and `out` a valid pointer.
enum FhbStatus fhb_forward_solve(const struct FhbConfig *cfg, struct FhbSolution **out);

// Releases a solution; null is ignored.
//
// # Safety
// `sol` must be null or a handle from this library not yet freed.
void fhb_solution_free(struct FhbSolution *sol);

// Secular angular frequency and normalized frequency `β`.
//
// # Safety
// `sol` must be a live handle; `omega` and `beta` may be null.
enum FhbStatus fhb_solution_frequency(const struct FhbSolution *sol, double *omega, double *beta);

// Number of harmonic coefficients in the solution.
//
// # Safety
// `sol` must be a live handle and `len` a valid pointer.
enum FhbStatus fhb_solution_len(const struct FhbSolution *sol, size_t *len);

// Copies the harmonic indices `(m, k)` and amplitudes into caller
// buffers of capacity `cap`.
//
// # Safety
// Each buffer must hold at least `cap` elements.
enum FhbStatus fhb_solution_coefficients(const struct FhbSolution *sol,
                                         int32_t *m,
                                         uint32_t *k,
                                         double *amplitude,
                                         size_t cap);

// Characteristic exponent `β` of the linear Mathieu equation.
//
// # Safety
// `beta` must be a valid pointer.
enum FhbStatus fhb_mathieu_exponent(double q, double a, double *beta);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOQUET_HB_H */
