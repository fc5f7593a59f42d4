/* C interface for the tvprox total-variation solvers. */

#ifndef TVPROX_H
#define TVPROX_H

/* Generated by cbindgen from the tvprox-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Layer mode code for `tvprox_layer_new`: smoothing keeps the operator
 * output, sharpening returns 2x minus it.
 */
#define TVPROX_MODE_SMOOTH 0

#define TVPROX_MODE_SHARPEN 1

/**
 * Spatial mode code for `tvprox_layer_new`: full 2D coupling, or
 * independent rows / columns.
 */
#define TVPROX_SPATIAL_2D 0

#define TVPROX_SPATIAL_ROWS 1

#define TVPROX_SPATIAL_COLS 2

/**
 * Result of every call. Non-zero codes describe the first problem
 * found; output buffers are untouched unless the call returns
 * `TVPROX_OK`.
 */
typedef enum TvStatus {
  /**
   * Success.
   */
  TVPROX_OK = 0,
  /**
   * A required pointer was null.
   */
  TVPROX_NULL_POINTER = 1,
  /**
   * A size, strength, or enum code is outside its domain.
   */
  TVPROX_INVALID_ARGUMENT = 2,
  /**
   * Buffer lengths that must agree do not.
   */
  TVPROX_SHAPE_MISMATCH = 3,
  /**
   * NaN or infinity in numeric input.
   */
  TVPROX_NON_FINITE = 4,
  /**
   * The solver failed internally; the inputs were well formed.
   */
  TVPROX_INTERNAL_ERROR = 5,
  /**
   * Backward was called with no forward pass stored in the handle.
   */
  TVPROX_NO_FORWARD_STATE = 6,
  /**
   * A panic was caught at the boundary.
   */
  TVPROX_PANIC = 7,
} TvStatus;

/**
 * Opaque trainable-layer handle. Owns the layer parameters plus the
 * saved state of the most recent forward pass, which
 * `tvprox_layer_backward` reads.
 */
typedef struct TvLayer TvLayer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * 1D total-variation proximal operator, projected-Newton solver.
 * Reads `n` doubles from `x`, writes `n` doubles to `y`.
 *
 * # Safety
 * `x` and `y` must point to `n` readable / writable doubles and must
 * not overlap.
 */
enum TvStatus tvprox_prox_tv1d(const double *x, uintptr_t n, double lambda, double *y);

/**
 * 1D total-variation proximal operator, direct taut-string solver.
 * Same contract as `tvprox_prox_tv1d`.
 *
 * # Safety
 * `x` and `y` must point to `n` readable / writable doubles and must
 * not overlap.
 */
enum TvStatus tvprox_prox_tv1d_tautstring(const double *x, uintptr_t n, double lambda, double *y);

/**
 * Batched 1D proximal operator over `batch` contiguous rows of length
 * `n` (row-major `batch * n` buffers). Rows are solved independently,
 * in parallel when a thread pool is available.
 *
 * # Safety
 * `x` and `y` must point to `batch * n` readable / writable doubles
 * and must not overlap.
 */
enum TvStatus tvprox_prox_tv1d_batch(const double *x,
                                     uintptr_t batch,
                                     uintptr_t n,
                                     double lambda,
                                     double *y);

/**
 * 2D anisotropic total-variation proximal operator on a row-major
 * `rows * cols` plane, via `iters` alternating-projection iterations
 * (4 is the recommended default).
 *
 * # Safety
 * `x` and `y` must point to `rows * cols` readable / writable doubles
 * and must not overlap.
 */
enum TvStatus tvprox_prox_tv2d(const double *x,
                               uintptr_t rows,
                               uintptr_t cols,
                               double lambda,
                               uintptr_t iters,
                               double *y);

/**
 * Creates a layer. `lambda_raw` holds `n_lambda` pre-activation
 * strengths (the effective strength per channel is the softplus);
 * `n_lambda` must be 1 (shared) or equal to the channel count used in
 * `tvprox_layer_forward`. `mode` is a `TVPROX_MODE_*` code, `spatial`
 * a `TVPROX_SPATIAL_*` code, `iters` the 2D iteration count. On
 * success writes the new handle to `out`; free it with
 * `tvprox_layer_free`.
 *
 * # Safety
 * `lambda_raw` must point to `n_lambda` readable doubles and `out` to
 * a writable pointer slot.
 */
enum TvStatus tvprox_layer_new(const double *lambda_raw,
                               uintptr_t n_lambda,
                               int32_t mode,
                               int32_t spatial,
                               uintptr_t iters,
                               struct TvLayer **out);

/**
 * Number of trainable strengths in the handle, for sizing the buffers
 * of `tvprox_layer_get_lambda_raw` and `tvprox_layer_backward`.
 *
 * # Safety
 * `handle` must be a live layer handle and `out` writable.
 */
enum TvStatus tvprox_layer_lambda_count(const struct TvLayer *handle, uintptr_t *out);

/**
 * Copies the current pre-activation strengths into `out` (`len` must
 * equal the handle's strength count).
 *
 * # Safety
 * `handle` must be a live layer handle; `out` must point to `len`
 * writable doubles.
 */
enum TvStatus tvprox_layer_get_lambda_raw(const struct TvLayer *handle, double *out, uintptr_t len);

/**
 * Replaces the pre-activation strengths (`len` must equal the handle's
 * strength count; the values must be finite). Any stored forward state
 * is discarded, since its gradients would describe the old parameters.
 *
 * # Safety
 * `handle` must be a live layer handle; `vals` must point to `len`
 * readable doubles.
 */
enum TvStatus tvprox_layer_set_lambda_raw(struct TvLayer *handle,
                                          const double *vals,
                                          uintptr_t len);

/**
 * Runs the layer on a planar `channels * height * width` stack
 * (channel-major, rows within a channel contiguous) and stores the
 * state the next backward call needs.
 *
 * # Safety
 * `handle` must be a live layer handle; `x` and `y` must point to
 * `channels * height * width` readable / writable doubles and must not
 * overlap.
 */
enum TvStatus tvprox_layer_forward(struct TvLayer *handle,
                                   const double *x,
                                   uintptr_t channels,
                                   uintptr_t height,
                                   uintptr_t width,
                                   double *y);

/**
 * Backward pass for the most recent forward call on this handle.
 * `gy` is the upstream gradient with the forward pass's shape; `gx`
 * receives the input gradient (same length) and `glambda_raw` the
 * gradient for each pre-activation strength (`glambda_len` must equal
 * the handle's strength count). The stored forward state is kept, so
 * several backward calls with different `gy` are allowed.
 *
 * # Safety
 * `handle` must be a live layer handle; `gy` / `gx` must point to the
 * forward pass's element count and `glambda_raw` to `glambda_len`
 * writable doubles; none may overlap.
 */
enum TvStatus tvprox_layer_backward(struct TvLayer *handle,
                                    const double *gy,
                                    double *gx,
                                    double *glambda_raw,
                                    uintptr_t glambda_len);

/**
 * Destroys a handle from `tvprox_layer_new`. Null is a no-op.
 *
 * # Safety
 * `handle` must be null or a live handle from `tvprox_layer_new`, and
 * must not be used afterwards.
 */
void tvprox_layer_free(struct TvLayer *handle);

/**
 * Static description of a status code (a `TvStatus` value, accepted
 * as an int so that out-of-range inputs stay well defined); never
 * returns null.
 */
const char *tvprox_status_message(int32_t status);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TVPROX_H */
