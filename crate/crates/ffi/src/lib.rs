//! C ABI for the tvprox library.
//!
//! Design rules, uniform across every entry point:
//! - No Rust type crosses the boundary. Signals and planes are borrowed
//!   `double` buffers with explicit dimensions; the trainable layer is
//!   an opaque heap handle.
//! - Every function returns a `TvStatus`; output buffers are written
//!   only on `TVPROX_OK`.
//! - Null pointers and zero sizes are rejected, never dereferenced.
//! - Panics cannot unwind into C: every body runs under `catch_unwind`
//!   and reports `TVPROX_PANIC` instead.
//!
//! Input and output buffers must not overlap. Handles are not thread
//! safe; callers must not use one handle from two threads at once.

use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use tvprox::{
    layer_backward, layer_forward, prox_tv1d_batch, prox_tv1d_newton, prox_tv1d_tautstring,
    prox_tv2d_dykstra, ChannelStack, DykstraOptions, ImagePlane, LayerMode, LayerParams,
    LayerSaved, NewtonOptions, Signal, SpatialMode, TvError,
};

/// Result of every call. Non-zero codes describe the first problem
/// found; output buffers are untouched unless the call returns
/// `TVPROX_OK`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvStatus {
    /// Success.
    TvproxOk = 0,
    /// A required pointer was null.
    TvproxNullPointer = 1,
    /// A size, strength, or enum code is outside its domain.
    TvproxInvalidArgument = 2,
    /// Buffer lengths that must agree do not.
    TvproxShapeMismatch = 3,
    /// NaN or infinity in numeric input.
    TvproxNonFinite = 4,
    /// The solver failed internally; the inputs were well formed.
    TvproxInternalError = 5,
    /// Backward was called with no forward pass stored in the handle.
    TvproxNoForwardState = 6,
    /// A panic was caught at the boundary.
    TvproxPanic = 7,
}

/// Layer mode code for `tvprox_layer_new`: smoothing keeps the operator
/// output, sharpening returns 2x minus it.
pub const TVPROX_MODE_SMOOTH: i32 = 0;
pub const TVPROX_MODE_SHARPEN: i32 = 1;

/// Spatial mode code for `tvprox_layer_new`: full 2D coupling, or
/// independent rows / columns.
pub const TVPROX_SPATIAL_2D: i32 = 0;
pub const TVPROX_SPATIAL_ROWS: i32 = 1;
pub const TVPROX_SPATIAL_COLS: i32 = 2;

fn status_of(err: &TvError) -> TvStatus {
    match err {
        TvError::NonFinite { .. } => TvStatus::TvproxNonFinite,
        TvError::EmptyShape { .. }
        | TvError::NegativeLambda { .. }
        | TvError::ShapeTooSmall { .. }
        | TvError::ShapeTooLarge { .. }
        | TvError::IndexOutOfBounds { .. } => TvStatus::TvproxInvalidArgument,
        TvError::ShapeMismatch { .. } => TvStatus::TvproxShapeMismatch,
        TvError::NotPositiveDefinite { .. }
        | TvError::InfeasibleDual { .. }
        | TvError::SingularMatrix { .. }
        | TvError::TapeMismatch { .. } => TvStatus::TvproxInternalError,
        TvError::InBatch { source, .. }
        | TvError::InChannel { source, .. }
        | TvError::InDykstra { source, .. } => status_of(source),
        // The error enum is non-exhaustive; anything a future core adds
        // is an internal failure until this map learns about it.
        _ => TvStatus::TvproxInternalError,
    }
}

fn guarded<F: FnOnce() -> TvStatus>(f: F) -> TvStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(TvStatus::TvproxPanic)
}

/// Borrows `len` doubles, refusing null and zero length.
unsafe fn slice_in<'a>(ptr: *const f64, len: usize) -> Result<&'a [f64], TvStatus> {
    if ptr.is_null() {
        return Err(TvStatus::TvproxNullPointer);
    }
    if len == 0 {
        return Err(TvStatus::TvproxInvalidArgument);
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_out<'a>(ptr: *mut f64, len: usize) -> Result<&'a mut [f64], TvStatus> {
    if ptr.is_null() {
        return Err(TvStatus::TvproxNullPointer);
    }
    if len == 0 {
        return Err(TvStatus::TvproxInvalidArgument);
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

fn map_core<T>(r: Result<T, TvError>) -> Result<T, TvStatus> {
    r.map_err(|e| status_of(&e))
}

/// 1D total-variation proximal operator, projected-Newton solver.
/// Reads `n` doubles from `x`, writes `n` doubles to `y`.
///
/// # Safety
/// `x` and `y` must point to `n` readable / writable doubles and must
/// not overlap.
#[no_mangle]
pub unsafe extern "C" fn tvprox_prox_tv1d(
    x: *const f64,
    n: usize,
    lambda: f64,
    y: *mut f64,
) -> TvStatus {
    guarded(|| {
        let xs = try_status!(slice_in(x, n));
        let ys = try_status!(slice_out(y, n));
        let signal = try_status!(map_core(Signal::new(xs.to_vec())));
        let solve = try_status!(map_core(prox_tv1d_newton(
            &signal,
            lambda,
            &NewtonOptions::default()
        )));
        ys.copy_from_slice(solve.y.values());
        TvStatus::TvproxOk
    })
}

/// 1D total-variation proximal operator, direct taut-string solver.
/// Same contract as `tvprox_prox_tv1d`.
///
/// # Safety
/// `x` and `y` must point to `n` readable / writable doubles and must
/// not overlap.
#[no_mangle]
pub unsafe extern "C" fn tvprox_prox_tv1d_tautstring(
    x: *const f64,
    n: usize,
    lambda: f64,
    y: *mut f64,
) -> TvStatus {
    guarded(|| {
        let xs = try_status!(slice_in(x, n));
        let ys = try_status!(slice_out(y, n));
        let signal = try_status!(map_core(Signal::new(xs.to_vec())));
        let out = try_status!(map_core(prox_tv1d_tautstring(&signal, lambda)));
        ys.copy_from_slice(out.values());
        TvStatus::TvproxOk
    })
}

/// Batched 1D proximal operator over `batch` contiguous rows of length
/// `n` (row-major `batch * n` buffers). Rows are solved independently,
/// in parallel when a thread pool is available.
///
/// # Safety
/// `x` and `y` must point to `batch * n` readable / writable doubles
/// and must not overlap.
#[no_mangle]
pub unsafe extern "C" fn tvprox_prox_tv1d_batch(
    x: *const f64,
    batch: usize,
    n: usize,
    lambda: f64,
    y: *mut f64,
) -> TvStatus {
    guarded(|| {
        if batch == 0 || n == 0 {
            return TvStatus::TvproxInvalidArgument;
        }
        let total = match batch.checked_mul(n) {
            Some(t) => t,
            None => return TvStatus::TvproxInvalidArgument,
        };
        let xs = try_status!(slice_in(x, total));
        let ys = try_status!(slice_out(y, total));
        let mut signals = Vec::with_capacity(batch);
        for row in xs.chunks_exact(n) {
            signals.push(try_status!(map_core(Signal::new(row.to_vec()))));
        }
        let solved = try_status!(map_core(prox_tv1d_batch(&signals, lambda)));
        for (dst, s) in ys.chunks_exact_mut(n).zip(&solved) {
            dst.copy_from_slice(s.values());
        }
        TvStatus::TvproxOk
    })
}

/// 2D anisotropic total-variation proximal operator on a row-major
/// `rows * cols` plane, via `iters` alternating-projection iterations
/// (4 is the recommended default).
///
/// # Safety
/// `x` and `y` must point to `rows * cols` readable / writable doubles
/// and must not overlap.
#[no_mangle]
pub unsafe extern "C" fn tvprox_prox_tv2d(
    x: *const f64,
    rows: usize,
    cols: usize,
    lambda: f64,
    iters: usize,
    y: *mut f64,
) -> TvStatus {
    guarded(|| {
        if rows == 0 || cols == 0 {
            return TvStatus::TvproxInvalidArgument;
        }
        let total = match rows.checked_mul(cols) {
            Some(t) => t,
            None => return TvStatus::TvproxInvalidArgument,
        };
        let xs = try_status!(slice_in(x, total));
        let ys = try_status!(slice_out(y, total));
        let plane = try_status!(map_core(ImagePlane::new(rows, cols, xs.to_vec())));
        let (out, _tape) = try_status!(map_core(prox_tv2d_dykstra(
            &plane,
            lambda,
            iters,
            &DykstraOptions::default()
        )));
        ys.copy_from_slice(out.values());
        TvStatus::TvproxOk
    })
}

/// Opaque trainable-layer handle. Owns the layer parameters plus the
/// saved state of the most recent forward pass, which
/// `tvprox_layer_backward` reads.
pub struct TvLayer {
    params: LayerParams,
    saved: Option<(LayerSaved, usize, usize, usize)>,
}

unsafe fn layer_ref<'a>(handle: *const TvLayer) -> Result<&'a TvLayer, TvStatus> {
    handle.as_ref().ok_or(TvStatus::TvproxNullPointer)
}

unsafe fn layer_mut<'a>(handle: *mut TvLayer) -> Result<&'a mut TvLayer, TvStatus> {
    handle.as_mut().ok_or(TvStatus::TvproxNullPointer)
}

/// Creates a layer. `lambda_raw` holds `n_lambda` pre-activation
/// strengths (the effective strength per channel is the softplus);
/// `n_lambda` must be 1 (shared) or equal to the channel count used in
/// `tvprox_layer_forward`. `mode` is a `TVPROX_MODE_*` code, `spatial`
/// a `TVPROX_SPATIAL_*` code, `iters` the 2D iteration count. On
/// success writes the new handle to `out`; free it with
/// `tvprox_layer_free`.
///
/// # Safety
/// `lambda_raw` must point to `n_lambda` readable doubles and `out` to
/// a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn tvprox_layer_new(
    lambda_raw: *const f64,
    n_lambda: usize,
    mode: i32,
    spatial: i32,
    iters: usize,
    out: *mut *mut TvLayer,
) -> TvStatus {
    guarded(|| {
        if out.is_null() {
            return TvStatus::TvproxNullPointer;
        }
        let raw = try_status!(slice_in(lambda_raw, n_lambda));
        let mode = match mode {
            TVPROX_MODE_SMOOTH => LayerMode::Smooth,
            TVPROX_MODE_SHARPEN => LayerMode::Sharpen,
            _ => return TvStatus::TvproxInvalidArgument,
        };
        let spatial = match spatial {
            TVPROX_SPATIAL_2D => SpatialMode::TwoD,
            TVPROX_SPATIAL_ROWS => SpatialMode::Rows,
            TVPROX_SPATIAL_COLS => SpatialMode::Cols,
            _ => return TvStatus::TvproxInvalidArgument,
        };
        let params = try_status!(map_core(LayerParams::new(
            raw.to_vec(),
            mode,
            spatial,
            iters
        )));
        let handle = Box::new(TvLayer {
            params,
            saved: None,
        });
        out.write(Box::into_raw(handle));
        TvStatus::TvproxOk
    })
}

/// Number of trainable strengths in the handle, for sizing the buffers
/// of `tvprox_layer_get_lambda_raw` and `tvprox_layer_backward`.
///
/// # Safety
/// `handle` must be a live layer handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tvprox_layer_lambda_count(
    handle: *const TvLayer,
    out: *mut usize,
) -> TvStatus {
    guarded(|| {
        let layer = try_status!(layer_ref(handle));
        if out.is_null() {
            return TvStatus::TvproxNullPointer;
        }
        out.write(layer.params.lambda_raw().len());
        TvStatus::TvproxOk
    })
}

/// Copies the current pre-activation strengths into `out` (`len` must
/// equal the handle's strength count).
///
/// # Safety
/// `handle` must be a live layer handle; `out` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tvprox_layer_get_lambda_raw(
    handle: *const TvLayer,
    out: *mut f64,
    len: usize,
) -> TvStatus {
    guarded(|| {
        let layer = try_status!(layer_ref(handle));
        let dst = try_status!(slice_out(out, len));
        if len != layer.params.lambda_raw().len() {
            return TvStatus::TvproxShapeMismatch;
        }
        dst.copy_from_slice(layer.params.lambda_raw());
        TvStatus::TvproxOk
    })
}

/// Replaces the pre-activation strengths (`len` must equal the handle's
/// strength count; the values must be finite). Any stored forward state
/// is discarded, since its gradients would describe the old parameters.
///
/// # Safety
/// `handle` must be a live layer handle; `vals` must point to `len`
/// readable doubles.
#[no_mangle]
pub unsafe extern "C" fn tvprox_layer_set_lambda_raw(
    handle: *mut TvLayer,
    vals: *const f64,
    len: usize,
) -> TvStatus {
    guarded(|| {
        let layer = try_status!(layer_mut(handle));
        let src = try_status!(slice_in(vals, len));
        if len != layer.params.lambda_raw().len() {
            return TvStatus::TvproxShapeMismatch;
        }
        let params = try_status!(map_core(LayerParams::new(
            src.to_vec(),
            layer.params.mode(),
            layer.params.spatial(),
            layer.params.dykstra_iters(),
        )));
        layer.params = params;
        layer.saved = None;
        TvStatus::TvproxOk
    })
}

/// Runs the layer on a planar `channels * height * width` stack
/// (channel-major, rows within a channel contiguous) and stores the
/// state the next backward call needs.
///
/// # Safety
/// `handle` must be a live layer handle; `x` and `y` must point to
/// `channels * height * width` readable / writable doubles and must not
/// overlap.
#[no_mangle]
pub unsafe extern "C" fn tvprox_layer_forward(
    handle: *mut TvLayer,
    x: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    y: *mut f64,
) -> TvStatus {
    guarded(|| {
        let layer = try_status!(layer_mut(handle));
        let total = match channels
            .checked_mul(height)
            .and_then(|t| t.checked_mul(width))
        {
            Some(t) if t > 0 => t,
            _ => return TvStatus::TvproxInvalidArgument,
        };
        let xs = try_status!(slice_in(x, total));
        let ys = try_status!(slice_out(y, total));
        let stack = try_status!(map_core(ChannelStack::new(
            channels,
            height,
            width,
            xs.to_vec()
        )));
        let (out, saved) = try_status!(map_core(layer_forward(&stack, &layer.params)));
        layer.saved = Some((saved, channels, height, width));
        ys.copy_from_slice(out.values());
        TvStatus::TvproxOk
    })
}

/// Backward pass for the most recent forward call on this handle.
/// `gy` is the upstream gradient with the forward pass's shape; `gx`
/// receives the input gradient (same length) and `glambda_raw` the
/// gradient for each pre-activation strength (`glambda_len` must equal
/// the handle's strength count). The stored forward state is kept, so
/// several backward calls with different `gy` are allowed.
///
/// # Safety
/// `handle` must be a live layer handle; `gy` / `gx` must point to the
/// forward pass's element count and `glambda_raw` to `glambda_len`
/// writable doubles; none may overlap.
#[no_mangle]
pub unsafe extern "C" fn tvprox_layer_backward(
    handle: *mut TvLayer,
    gy: *const f64,
    gx: *mut f64,
    glambda_raw: *mut f64,
    glambda_len: usize,
) -> TvStatus {
    guarded(|| {
        let layer = try_status!(layer_mut(handle));
        let (saved, channels, height, width) = match &layer.saved {
            Some((s, c, h, w)) => (s, *c, *h, *w),
            None => return TvStatus::TvproxNoForwardState,
        };
        let total = channels * height * width;
        let gys = try_status!(slice_in(gy, total));
        let gxs = try_status!(slice_out(gx, total));
        let grs = try_status!(slice_out(glambda_raw, glambda_len));
        if glambda_len != layer.params.lambda_raw().len() {
            return TvStatus::TvproxShapeMismatch;
        }
        let gy_stack = try_status!(map_core(ChannelStack::new(
            channels,
            height,
            width,
            gys.to_vec()
        )));
        let (gx_stack, graw) = try_status!(map_core(layer_backward(saved, &gy_stack)));
        gxs.copy_from_slice(gx_stack.values());
        grs.copy_from_slice(&graw);
        TvStatus::TvproxOk
    })
}

/// Destroys a handle from `tvprox_layer_new`. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a live handle from `tvprox_layer_new`, and
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tvprox_layer_free(handle: *mut TvLayer) {
    if !handle.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(handle))));
    }
}

/// Static description of a status code (a `TvStatus` value, accepted
/// as an int so that out-of-range inputs stay well defined); never
/// returns null.
#[no_mangle]
pub extern "C" fn tvprox_status_message(status: i32) -> *const c_char {
    let msg: &'static [u8] = match status {
        x if x == TvStatus::TvproxOk as i32 => b"ok\0",
        x if x == TvStatus::TvproxNullPointer as i32 => b"a required pointer was null\0",
        x if x == TvStatus::TvproxInvalidArgument as i32 => {
            b"a size, strength, or enum code is out of domain\0"
        }
        x if x == TvStatus::TvproxShapeMismatch as i32 => b"buffer lengths disagree\0",
        x if x == TvStatus::TvproxNonFinite as i32 => b"non-finite value in numeric input\0",
        x if x == TvStatus::TvproxInternalError as i32 => b"internal solver failure\0",
        x if x == TvStatus::TvproxNoForwardState as i32 => b"backward called before forward\0",
        x if x == TvStatus::TvproxPanic as i32 => b"panic caught at the language boundary\0",
        _ => b"unknown status code\0",
    };
    msg.as_ptr() as *const c_char
}
