//! Core array and parameter types shared by every other module.
//!
//! All types validate their invariants at construction and are immutable
//! afterwards, so a `Signal`, `ImagePlane`, or `ChannelStack` in hand is
//! always finite and non-empty. Everything is `f64`: oracle comparisons at
//! 1e-8 tolerance are not reliable in single precision.

use crate::error::TvError;

fn check_finite(values: &[f64], context: &'static str) -> Result<(), TvError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TvError::NonFinite { context });
    }
    Ok(())
}

/// A 1D sequence of finite sample values, length >= 1.
///
/// Length-1 signals are legal everywhere; their TV term is empty and the
/// prox is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Vec<f64>,
}

impl Signal {
    /// Validates and wraps raw values.
    pub fn new(values: Vec<f64>) -> Result<Self, TvError> {
        if values.is_empty() {
            return Err(TvError::EmptyShape { context: "signal" });
        }
        check_finite(&values, "signal")?;
        Ok(Signal { values })
    }

    /// Wraps values produced by internal arithmetic on already-validated
    /// inputs, skipping the O(N) finiteness scan on release hot paths.
    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Signal { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false: the length-0 case is rejected at construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// An M x N grid of finite values with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ImagePlane {
    /// Validates and wraps raw row-major values.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, TvError> {
        if rows == 0 || cols == 0 {
            return Err(TvError::EmptyShape {
                context: "image plane",
            });
        }
        if values.len() != rows * cols {
            return Err(TvError::ShapeMismatch {
                context: "image plane values",
                expected: rows * cols,
                got: values.len(),
            });
        }
        check_finite(&values, "image plane")?;
        Ok(ImagePlane { rows, cols, values })
    }

    pub(crate) fn from_trusted(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ImagePlane { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Copies row `m` out as a Signal of length `cols`.
    pub fn row(&self, m: usize) -> Signal {
        let start = m * self.cols;
        Signal::from_trusted(self.values[start..start + self.cols].to_vec())
    }

    /// Copies column `n` out as a Signal of length `rows`.
    pub fn col(&self, n: usize) -> Signal {
        let mut v = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            v.push(self.values[r * self.cols + n]);
        }
        Signal::from_trusted(v)
    }

    pub fn transpose(&self) -> ImagePlane {
        let mut out = vec![0.0; self.values.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        ImagePlane::from_trusted(self.cols, self.rows, out)
    }
}

/// A C x H x W stack of image planes (channel-major storage).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ChannelStack {
    /// Validates and wraps raw channel-major values.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self, TvError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(TvError::EmptyShape {
                context: "channel stack",
            });
        }
        if values.len() != channels * height * width {
            return Err(TvError::ShapeMismatch {
                context: "channel stack values",
                expected: channels * height * width,
                got: values.len(),
            });
        }
        check_finite(&values, "channel stack")?;
        Ok(ChannelStack {
            channels,
            height,
            width,
            values,
        })
    }

    pub(crate) fn from_trusted(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), channels * height * width);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ChannelStack {
            channels,
            height,
            width,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copies channel `c` out as an ImagePlane.
    pub fn channel(&self, c: usize) -> ImagePlane {
        let plane = self.height * self.width;
        let start = c * plane;
        ImagePlane::from_trusted(
            self.height,
            self.width,
            self.values[start..start + plane].to_vec(),
        )
    }

    /// Assembles a stack from per-channel planes of equal shape.
    pub fn from_planes(planes: &[ImagePlane]) -> Result<Self, TvError> {
        if planes.is_empty() {
            return Err(TvError::EmptyShape {
                context: "channel stack",
            });
        }
        let (h, w) = (planes[0].rows(), planes[0].cols());
        let mut values = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.rows() != h || p.cols() != w {
                return Err(TvError::ShapeMismatch {
                    context: "channel plane",
                    expected: h * w,
                    got: p.rows() * p.cols(),
                });
            }
            values.extend_from_slice(p.values());
        }
        Ok(ChannelStack {
            channels: planes.len(),
            height: h,
            width: w,
            values,
        })
    }
}

/// Dual variable of the 1D problem: one entry per adjacent difference,
/// so length N-1 (possibly 0 when N = 1). Box feasibility |u_i| <= lambda
/// is checked where lambda is known, not at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    values: Vec<f64>,
}

impl DualVector {
    /// Validates finiteness; empty is legal (N = 1 has no dual variables).
    pub fn new(values: Vec<f64>) -> Result<Self, TvError> {
        check_finite(&values, "dual vector")?;
        Ok(DualVector { values })
    }

    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        DualVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A sorted, duplicate-free index set selecting rows/columns of a matrix;
/// used to carve principal submatrices for the free variables of a
/// projected-Newton step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    /// Validates that `indices` is strictly increasing and within `[0, dim)`.
    pub fn new(indices: Vec<usize>, dim: usize) -> Result<Self, TvError> {
        for (k, &i) in indices.iter().enumerate() {
            if i >= dim {
                return Err(TvError::IndexOutOfBounds { index: i, dim });
            }
            if k > 0 && indices[k - 1] >= i {
                return Err(TvError::IndexOutOfBounds { index: i, dim });
            }
        }
        Ok(ActiveSet { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Smoothing keeps the prox output; sharpening adds the residual back:
/// y = 2x - prox(x).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    Smooth,
    Sharpen,
}

/// Which axis structure the layer's prox runs over: full 2D (Dykstra),
/// or independent 1D solves per row / per column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialMode {
    TwoD,
    Rows,
    Cols,
}

/// Learnable layer parameters: unconstrained per-channel lambda_raw with
/// effective lambda_c = softplus(lambda_raw_c), plus mode flags.
///
/// `lambda_raw` has either one entry per channel or a single entry shared
/// across all channels; in the shared case the backward pass sums the
/// per-channel lambda gradients into one.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    lambda_raw: Vec<f64>,
    mode: LayerMode,
    spatial: SpatialMode,
    dykstra_iters: usize,
}

impl LayerParams {
    pub fn new(
        lambda_raw: Vec<f64>,
        mode: LayerMode,
        spatial: SpatialMode,
        dykstra_iters: usize,
    ) -> Result<Self, TvError> {
        if lambda_raw.is_empty() {
            return Err(TvError::EmptyShape {
                context: "lambda_raw",
            });
        }
        // -inf is rejected along with NaN: exact lambda = 0 is reachable with
        // any finite lambda_raw below roughly -746 (softplus underflows to 0).
        check_finite(&lambda_raw, "lambda_raw")?;
        if dykstra_iters == 0 {
            return Err(TvError::ShapeTooSmall {
                context: "dykstra_iters",
                min: 1,
                got: 0,
            });
        }
        Ok(LayerParams {
            lambda_raw,
            mode,
            spatial,
            dykstra_iters,
        })
    }

    pub fn lambda_raw(&self) -> &[f64] {
        &self.lambda_raw
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn spatial(&self) -> SpatialMode {
        self.spatial
    }

    pub fn dykstra_iters(&self) -> usize {
        self.dykstra_iters
    }

    /// True when a single lambda_raw entry is broadcast over all channels.
    pub fn is_shared(&self) -> bool {
        self.lambda_raw.len() == 1
    }

    /// The raw parameter for channel `c` (broadcasting the shared entry).
    pub fn lambda_raw_for(&self, c: usize) -> f64 {
        if self.is_shared() {
            self.lambda_raw[0]
        } else {
            self.lambda_raw[c]
        }
    }

    /// Checks compatibility with a stack of `channels` channels.
    pub fn check_channels(&self, channels: usize) -> Result<(), TvError> {
        if self.is_shared() || self.lambda_raw.len() == channels {
            Ok(())
        } else {
            Err(TvError::ShapeMismatch {
                context: "lambda_raw channels",
                expected: channels,
                got: self.lambda_raw.len(),
            })
        }
    }
}
