#ifndef RADMAG_H
#define RADMAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Point flags, OR-ed into `RadmagOrientation::flags`.
 */
#define RADMAG_FLAG_NON_CONVERGED 1

#define RADMAG_FLAG_CLAMPED 2

#define RADMAG_FLAG_NON_CONSERVING 4

/**
 * Result of every fallible call.
 */
typedef enum RadmagStatus {
  RADMAG_STATUS_OK = 0,
  RADMAG_STATUS_NULL_POINTER = 1,
  RADMAG_STATUS_INVALID_ARGUMENT = 2,
  RADMAG_STATUS_CONFIG = 3,
  RADMAG_STATUS_RUNTIME = 4,
  RADMAG_STATUS_PANIC = 5,
} RadmagStatus;

/**
 * Opaque model handle.
 */
typedef struct RadmagModel RadmagModel;

/**
 * Summary of one propagation.
 */
typedef struct RadmagSimulation {
  double singlet_yield;
  double singlet_probability;
  double conservation_residual;
  double final_trace;
  double dt_us;
  size_t steps;
} RadmagSimulation;

/**
 * Estimation at one orientation. `ratio` is NaN where the quantum Fisher
 * information vanishes.
 */
typedef struct RadmagOrientation {
  double theta;
  double phi;
  double singlet_yield;
  double singlet_probability;
  double cfi;
  double qfi;
  double ratio;
  uint32_t flags;
} RadmagOrientation;

/**
 * Outcome of a control optimization.
 */
typedef struct RadmagControl {
  double initial_objective;
  double final_objective;
  double contrast;
  size_t iterations;
  bool converged;
  bool stagnated;
} RadmagControl;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *radmag_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *radmag_version(void);

/**
 * Parse a model from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` writable.
 */
enum RadmagStatus radmag_model_from_toml(const char *toml, struct RadmagModel **out);

/**
 * Load a model from a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RadmagStatus radmag_model_from_path(const char *path, struct RadmagModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from a constructor above and not have been freed.
 */
void radmag_model_free(struct RadmagModel *model);

/**
 * Hilbert-space dimension of the model.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum RadmagStatus radmag_model_dim(const struct RadmagModel *model, size_t *out);

/**
 * Set J0/2π in MHz.
 *
 * # Safety
 * `model` must be a live handle not used concurrently.
 */
enum RadmagStatus radmag_model_set_j0_mhz(struct RadmagModel *model, double j0_over_2pi);

/**
 * Propagate one orientation. `nu_mhz = 0` means undriven.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum RadmagStatus radmag_simulate(const struct RadmagModel *model,
                                  double theta,
                                  double phi,
                                  double nu_mhz,
                                  double delta_a,
                                  struct RadmagSimulation *out);

/**
 * Fisher information, quantum Fisher information and their ratio at one
 * orientation.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum RadmagStatus radmag_metrology_point(const struct RadmagModel *model,
                                         double theta,
                                         double phi,
                                         double nu_mhz,
                                         double delta_a,
                                         struct RadmagOrientation *out);

/**
 * Relative anisotropy (max − min)/mean of `n >= 2` yields.
 *
 * # Safety
 * `yields` must point to `n` readable doubles and `out` be writable.
 */
enum RadmagStatus radmag_anisotropy(const double *yields, size_t n, double *out);

/**
 * Δθ in degrees for Fisher information `cfi` per probe and `receptors`
 * independent probes.
 *
 * # Safety
 * `out` must be writable.
 */
enum RadmagStatus radmag_angular_precision(double cfi, double receptors, double *out);

/**
 * Maximize the yield contrast between two orientations over `n` segment
 * displacements of `segment_us` each, bounded by `u_max` Å. `u` holds the
 * initial sequence and receives the optimized one.
 *
 * # Safety
 * `model` must be a live handle, `u` must point to `n` writable doubles and
 * `out` be writable.
 */
enum RadmagStatus radmag_control_optimize(const struct RadmagModel *model,
                                          double theta_max,
                                          double phi_max,
                                          double theta_min,
                                          double phi_min,
                                          double segment_us,
                                          double u_max,
                                          double lambda,
                                          size_t max_iters,
                                          double *u,
                                          size_t n,
                                          struct RadmagControl *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RADMAG_H */
