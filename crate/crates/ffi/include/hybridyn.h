#ifndef HYBRIDYN_H
#define HYBRIDYN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum HybStatus {
  HYB_STATUS_OK = 0,
  HYB_STATUS_NULL_ARGUMENT = 1,
  HYB_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed scenario or inconsistent arguments.
   */
  HYB_STATUS_CONFIG = 3,
  /**
   * Trace drift, boundary leak, instability or another numerical failure.
   */
  HYB_STATUS_NUMERICAL = 4,
  HYB_STATUS_IO = 5,
  HYB_STATUS_PANIC = 6,
} HybStatus;

/**
 * Normalization convention of the reduced dissipator.
 */
typedef enum HybKernelPreset {
  HYB_KERNEL_PRESET_DERIVED_HALF = 0,
  HYB_KERNEL_PRESET_DIO87 = 1,
} HybKernelPreset;

/**
 * Reduced quantum master equation.
 */
typedef struct HybLindblad HybLindblad;

/**
 * Parsed, validated scenario.
 */
typedef struct HybScenario HybScenario;

/**
 * Complex number laid out as two doubles.
 */
typedef struct HybComplex {
  double re;
  double im;
} HybComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *hyb_last_error(void);

/**
 * Parses a JSON scenario and applies `n_overrides` `key.path=value`
 * strings. On success `*out` owns a new handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string, `overrides` an array of
 * `n_overrides` such strings (or null when zero), `out` writable.
 */
enum HybStatus hyb_scenario_parse(const char *json,
                                  const char *const *overrides,
                                  size_t n_overrides,
                                  struct HybScenario **out);

/**
 * Writes the 64-character config hash and a NUL into `buf`, which must
 * hold at least 65 bytes.
 *
 * # Safety
 * `scenario` must come from [`hyb_scenario_parse`]; `buf` must be writable
 * for `len` bytes.
 */
enum HybStatus hyb_scenario_hash(const struct HybScenario *scenario, char *buf, size_t len);

/**
 * Runs the scenario and writes its artifacts and manifest into `out_dir`.
 * `seed` is used only when `use_seed` is nonzero.
 *
 * # Safety
 * `scenario` must come from [`hyb_scenario_parse`]; `out_dir` must be a
 * NUL-terminated path.
 */
enum HybStatus hyb_scenario_run(const struct HybScenario *scenario,
                                const char *out_dir,
                                uint64_t seed,
                                int32_t use_seed);

/**
 * Releases a scenario; null is ignored.
 *
 * # Safety
 * `scenario` must come from [`hyb_scenario_parse`] and not be used afterwards.
 */
void hyb_scenario_free(struct HybScenario *scenario);

/**
 * Builds a reduced model from `dim x dim` row-major matrices: `hq`, `hg`,
 * `n_ops` coupling operators stored back to back, and an `n_ops x n_ops`
 * row-major kernel.
 *
 * # Safety
 * All pointers must reference arrays of the stated sizes; `out` writable.
 */
enum HybStatus hyb_lindblad_new(size_t dim,
                                const struct HybComplex *hq,
                                const struct HybComplex *hg,
                                size_t n_ops,
                                const struct HybComplex *ops,
                                const double *kernel,
                                double hbar,
                                enum HybKernelPreset preset,
                                struct HybLindblad **out);

/**
 * Integrates from `rho0` to `t_final` with step `dt` and writes the final
 * `dim x dim` state into `rho_out`.
 *
 * # Safety
 * `model` must come from [`hyb_lindblad_new`]; `rho0` and `rho_out` must
 * hold `dim * dim` entries.
 */
enum HybStatus hyb_lindblad_evolve(const struct HybLindblad *model,
                                   const struct HybComplex *rho0,
                                   double dt,
                                   double t_final,
                                   struct HybComplex *rho_out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`hyb_lindblad_new`] and not be used afterwards.
 */
void hyb_lindblad_free(struct HybLindblad *model);

/**
 * `DC(k) DQ(k)` for the continuum kernels at wavevector `k[3]`.
 *
 * # Safety
 * `k` must hold three doubles; `out` must be writable.
 */
enum HybStatus hyb_fourier_mode_product(const double *k, double hbar, double g, double *out);

/**
 * Decoherence rate between two branches that each hold mass `m` on one
 * site of an `n^3` lattice with spacing `a` and smearing `sigma`.
 *
 * # Safety
 * `site_a` and `site_b` must hold three indices each; `out` writable.
 */
enum HybStatus hyb_penrose_rate_sites(size_t n,
                                      double a,
                                      double sigma,
                                      double m,
                                      const size_t *site_a,
                                      const size_t *site_b,
                                      double hbar,
                                      double g,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYBRIDYN_H */
