//! Error taxonomy shared across the library.
//!
//! Numeric operations return `TvError`; PNM file parsing has its own
//! `PnmError` in `imgio` since its failure modes are byte-level, not numeric.

use thiserror::Error;

/// Axis of a Dykstra pass, used for error context and tape bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassAxis {
    Rows,
    Cols,
}

impl std::fmt::Display for PassAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PassAxis::Rows => write!(f, "rows"),
            PassAxis::Cols => write!(f, "cols"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[non_exhaustive]
pub enum TvError {
    /// NaN or infinity in an input that must be finite.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A dimension that must be at least 1 is 0.
    #[error("empty shape in {context}")]
    EmptyShape { context: &'static str },

    /// Regularization weight below 0.
    #[error("lambda must be >= 0, got {value}")]
    NegativeLambda { value: f64 },

    /// Shape below the operation's minimum.
    #[error("{context}: need at least {min}, got {got}")]
    ShapeTooSmall {
        context: &'static str,
        min: usize,
        got: usize,
    },

    /// Shape above the hard cap of a testing-only path.
    #[error("{context}: size {got} exceeds cap {max}")]
    ShapeTooLarge {
        context: &'static str,
        max: usize,
        got: usize,
    },

    /// Index set entry outside the matrix dimension.
    #[error("index {index} out of bounds for dimension {dim}")]
    IndexOutOfBounds { index: usize, dim: usize },

    /// Lengths that must agree do not.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Cholesky pivot at or below the positive-definiteness threshold.
    #[error("matrix not positive definite: pivot {pivot} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// Dual vector violates the box constraint beyond tolerance.
    #[error("dual infeasible: |u[{index}]| = {value} exceeds bound {bound}")]
    InfeasibleDual {
        index: usize,
        value: f64,
        bound: f64,
    },

    /// Dense elimination found no usable pivot in a column.
    #[error("singular matrix: no pivot in column {column}")]
    SingularMatrix { column: usize },

    /// Backward tape inconsistent with the incoming gradient or forward state.
    #[error("tape mismatch: {context}")]
    TapeMismatch { context: &'static str },

    /// Failure in one signal of a batch.
    #[error("signal {index} of batch: {source}")]
    InBatch { index: usize, source: Box<TvError> },

    /// Failure in one channel of a stack.
    #[error("channel {channel}: {source}")]
    InChannel {
        channel: usize,
        source: Box<TvError>,
    },

    /// Failure inside a Dykstra pass, with iteration and line position.
    #[error("dykstra iteration {iteration}, {axis} pass, line {line}: {source}")]
    InDykstra {
        iteration: usize,
        axis: PassAxis,
        line: usize,
        source: Box<TvError>,
    },
}

impl TvError {
    /// Wraps an error with the index of the failing signal in a batch.
    pub(crate) fn in_batch(self, index: usize) -> TvError {
        TvError::InBatch {
            index,
            source: Box::new(self),
        }
    }

    /// Wraps an error with the channel it occurred in.
    pub(crate) fn in_channel(self, channel: usize) -> TvError {
        TvError::InChannel {
            channel,
            source: Box::new(self),
        }
    }
}
