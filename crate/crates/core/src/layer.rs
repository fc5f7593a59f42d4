//! Differentiable multichannel smoothing/sharpening layer.
//!
//! Each channel c is smoothed by the TV prox with an effective strength
//! lambda_c = softplus(lambda_raw_c), so the learnable parameter is
//! unconstrained while the strength stays nonnegative. Smooth mode outputs
//! the prox result s; sharpen mode outputs 2x - s, boosting whatever the
//! prox removed. The forward pass returns a saved state from which
//! `layer_backward` produces exact cotangents for the input and for
//! lambda_raw (per channel, or summed when a single raw value is shared).
//!
//! Spatial structure is selectable: full 2D (Dykstra iterations), or
//! independent 1D solves along rows or along columns.

use crate::error::{PassAxis, TvError};
use crate::grad1d::DEFAULT_SEG_TOL;
use crate::prox2d::{
    pass_vjp, prox_pass, prox_tv2d_dykstra, prox_tv2d_vjp, DykstraOptions, DykstraTape,
};
use crate::types::{ChannelStack, ImagePlane, LayerMode, LayerParams, SpatialMode};

/// softplus(v) = ln(1 + e^v), overflow-safe: linear above 30, e^v below
/// -30 (both branches are exact to double precision there).
pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

/// Inverse of `softplus` on y > 0: ln(e^y - 1), with the identity branch
/// above 30 where softplus is the identity to double precision.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Logistic function, overflow-safe on both tails. Also d softplus / dv.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Raw parameter giving an effective strength of 0.05, a sensible starting
/// point for signals in [0, 1].
pub fn default_lambda_raw() -> f64 {
    softplus_inv(0.05)
}

/// Per-channel record of how the forward pass smoothed the channel.
#[derive(Debug, Clone, PartialEq)]
enum ChannelTape {
    /// lambda was exactly 0: forward was the identity, backward is too.
    Identity,
    TwoD(DykstraTape),
    Lines {
        axis: PassAxis,
        output: ImagePlane,
    },
}

/// Forward-pass state consumed by `layer_backward`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSaved {
    params: LayerParams,
    lambdas: Vec<f64>,
    tapes: Vec<ChannelTape>,
    height: usize,
    width: usize,
}

impl LayerSaved {
    /// Effective smoothing strength per channel.
    pub fn effective_lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }
}

fn plane_combine(a: &ImagePlane, b: &ImagePlane, f: impl Fn(f64, f64) -> f64) -> ImagePlane {
    let v = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| f(*x, *y))
        .collect();
    ImagePlane::from_trusted(a.rows(), a.cols(), v)
}

fn axis_of(spatial: SpatialMode) -> PassAxis {
    match spatial {
        SpatialMode::Rows => PassAxis::Rows,
        SpatialMode::Cols => PassAxis::Cols,
        SpatialMode::TwoD => unreachable!("2D handled separately"),
    }
}

fn smooth_channel(
    plane: &ImagePlane,
    lambda: f64,
    params: &LayerParams,
) -> Result<(ImagePlane, ChannelTape), TvError> {
    if lambda == 0.0 {
        return Ok((plane.clone(), ChannelTape::Identity));
    }
    match params.spatial() {
        SpatialMode::TwoD => {
            let (s, tape) = prox_tv2d_dykstra(
                plane,
                lambda,
                params.dykstra_iters(),
                &DykstraOptions::default(),
            )?;
            Ok((s, ChannelTape::TwoD(tape)))
        }
        SpatialMode::Rows | SpatialMode::Cols => {
            let axis = axis_of(params.spatial());
            let pass = prox_pass(plane, axis, lambda, &Default::default(), 0)?;
            let output = pass.plane.clone();
            Ok((pass.plane, ChannelTape::Lines { axis, output }))
        }
    }
}

/// Applies the layer to a C x H x W stack. Returns the output stack and
/// the saved state for the backward pass. Channel c uses
/// softplus(lambda_raw_c); an effective lambda of exactly 0 reproduces the
/// input bit-for-bit in both modes.
pub fn layer_forward(
    x: &ChannelStack,
    params: &LayerParams,
) -> Result<(ChannelStack, LayerSaved), TvError> {
    params.check_channels(x.channels())?;
    let mut lambdas = Vec::with_capacity(x.channels());
    let mut tapes = Vec::with_capacity(x.channels());
    let mut out_planes = Vec::with_capacity(x.channels());

    for c in 0..x.channels() {
        let lambda = softplus(params.lambda_raw_for(c));
        let plane = x.channel(c);
        let (s, tape) = smooth_channel(&plane, lambda, params).map_err(|e| e.in_channel(c))?;
        let y = match params.mode() {
            LayerMode::Smooth => s,
            // 2a - b is exact when b == a (2a is exact, and 2a - a = a by
            // Sterbenz), which keeps the lambda = 0 identity bitwise.
            LayerMode::Sharpen => plane_combine(&plane, &s, |a, b| 2.0 * a - b),
        };
        lambdas.push(lambda);
        tapes.push(tape);
        out_planes.push(y);
    }

    let out = ChannelStack::from_planes(&out_planes)?;
    let saved = LayerSaved {
        params: params.clone(),
        lambdas,
        tapes,
        height: x.height(),
        width: x.width(),
    };
    Ok((out, saved))
}

fn channel_vjp(tape: &ChannelTape, g: &ImagePlane) -> Result<(ImagePlane, f64), TvError> {
    match tape {
        ChannelTape::Identity => Ok((g.clone(), 0.0)),
        ChannelTape::TwoD(t) => prox_tv2d_vjp(t, g),
        ChannelTape::Lines { axis, output } => pass_vjp(output, g, *axis, DEFAULT_SEG_TOL),
    }
}

/// Backpropagates a cotangent stack through a saved forward pass. Returns
/// the input cotangent and the cotangent of `lambda_raw` (length C, or
/// length 1 with the per-channel contributions summed when the raw
/// parameter is shared).
pub fn layer_backward(
    saved: &LayerSaved,
    gy: &ChannelStack,
) -> Result<(ChannelStack, Vec<f64>), TvError> {
    let channels = saved.tapes.len();
    if gy.channels() != channels || gy.height() != saved.height || gy.width() != saved.width {
        return Err(TvError::ShapeMismatch {
            context: "layer cotangent",
            expected: channels * saved.height * saved.width,
            got: gy.channels() * gy.height() * gy.width(),
        });
    }

    let mut gx_planes = Vec::with_capacity(channels);
    let mut glambda = Vec::with_capacity(channels);
    for c in 0..channels {
        let g = gy.channel(c);
        let (vx, vl) = channel_vjp(&saved.tapes[c], &g).map_err(|e| e.in_channel(c))?;
        match saved.params.mode() {
            LayerMode::Smooth => {
                gx_planes.push(vx);
                glambda.push(vl);
            }
            LayerMode::Sharpen => {
                gx_planes.push(plane_combine(&g, &vx, |a, b| 2.0 * a - b));
                glambda.push(-vl);
            }
        }
    }

    let graw = if saved.params.is_shared() {
        let s = sigmoid(saved.params.lambda_raw()[0]);
        vec![glambda.iter().sum::<f64>() * s]
    } else {
        glambda
            .iter()
            .enumerate()
            .map(|(c, gl)| gl * sigmoid(saved.params.lambda_raw()[c]))
            .collect()
    };
    Ok((ChannelStack::from_planes(&gx_planes)?, graw))
}
