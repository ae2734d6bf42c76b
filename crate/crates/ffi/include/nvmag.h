#ifndef NVMAG_H
#define NVMAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NvmagFamily {
  NVMAG_FAMILY_FREE = 0,
  NVMAG_FAMILY_CPMG = 1,
  NVMAG_FAMILY_XY8 = 2,
  NVMAG_FAMILY_XY16 = 3,
} NvmagFamily;

typedef enum NvmagStatus {
  NVMAG_STATUS_OK = 0,
  NVMAG_STATUS_NULL_POINTER = 1,
  NVMAG_STATUS_USAGE = 2,
  NVMAG_STATUS_DATA = 3,
  NVMAG_STATUS_NUMERICAL = 4,
  NVMAG_STATUS_PANIC = 5,
} NvmagStatus;

/**
 * Opaque protocol configuration.
 */
typedef struct NvmagProtocol NvmagProtocol;

/**
 * Result of a depth fit. Lengths in m, times in s.
 */
typedef struct NvmagDepthFit {
  double depth_m;
  double depth_err_m;
  double t2n_star_s;
  double t2n_star_err_s;
  double reduced_chi2;
} NvmagDepthFit;

/**
 * Sensitivity of a simulated run. η in T/√Hz.
 */
typedef struct NvmagSensitivity {
  double eta_asymptote;
  double eta_slope;
  double eta_predicted;
  double total_time_s;
  size_t shots;
} NvmagSensitivity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t nvmag_last_error(char *buf, size_t len);

/**
 * Energy resolution per bandwidth, in units of ħ.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum NvmagStatus nvmag_erl_compute(double eta, double l_eff_m, double *out);

/**
 * Power decibels of `E_R` below ħ.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum NvmagStatus nvmag_db_below_erl(double e_r_hbar, double *out);

/**
 * ERL noise line `2μ₀ħ/(e l³)` in T²/Hz.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum NvmagStatus nvmag_erl_noise_line(double l_eff_m, double *out);

/**
 * Sensitivity (T/√Hz) from a timing and fidelity budget.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum NvmagStatus nvmag_eta_from_budget(double t_c,
                                       double contrast,
                                       double f_i,
                                       double f_r,
                                       double t_ir,
                                       double *out);

/**
 * Fit the NV depth to a proton-dip scan of `n` points.
 *
 * `sigma` may be null for unit weights.
 *
 * # Safety
 * `tau_s` and `coherence` (and `sigma` if non-null) must point to `n`
 * doubles; `out` must be writable.
 */
enum NvmagStatus nvmag_depth_fit(const double *tau_s,
                                 const double *coherence,
                                 const double *sigma,
                                 size_t n,
                                 enum NvmagFamily family,
                                 size_t n_pulses,
                                 double b0_tesla,
                                 double rho_per_nm3,
                                 struct NvmagDepthFit *out);

/**
 * New protocol with the NV3 defaults. Free with [`nvmag_protocol_free`].
 *
 * # Safety
 * `out` must point to a writable pointer.
 */
enum NvmagStatus nvmag_protocol_new_nv3(struct NvmagProtocol **out);

/**
 * Protocol from a JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum NvmagStatus nvmag_protocol_from_json(const char *json, struct NvmagProtocol **out);

/**
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void nvmag_protocol_free(struct NvmagProtocol *p);

/**
 * # Safety
 * `p` must be a live protocol handle.
 */
enum NvmagStatus nvmag_protocol_set_shots(struct NvmagProtocol *p, size_t shots);

/**
 * Simulate the sensitivity run and reduce it to η.
 *
 * # Safety
 * `p` must be a live protocol handle; `out` must be writable.
 */
enum NvmagStatus nvmag_protocol_run(const struct NvmagProtocol *p,
                                    uint64_t seed,
                                    struct NvmagSensitivity *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NVMAG_H */
