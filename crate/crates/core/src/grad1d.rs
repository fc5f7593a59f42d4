//! Gradients of the 1D prox with respect to its input and to lambda.
//!
//! At a solution y the prox is locally a projection onto signals that are
//! constant on y's segments, so the input Jacobian is the block-averaging
//! projector over the segment partition and a VJP is just per-segment
//! averaging of the incoming cotangent. The lambda derivative moves each
//! segment by (s_R - s_L) / |S|, where s_L and s_R are the signs of the
//! jumps into and out of the segment (0 at the signal ends).
//!
//! Both quantities also come from an explicit small-matrix path (stack the
//! cumulative-sum basis restricted to segment starts, solve its Gram
//! system): slower, independent, used to validate the fast formulas.

use crate::error::TvError;
use crate::testkit::dense_solve_baseline;
use crate::types::Signal;

/// Default threshold on |y_{i+1} - y_i| above which two samples belong to
/// different segments.
pub const DEFAULT_SEG_TOL: f64 = 1e-9;

/// Partition of 0..n into maximal runs where y is constant up to the
/// detection tolerance. `starts` always begins with 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPartition {
    starts: Vec<usize>,
    n: usize,
}

impl SegmentPartition {
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn signal_len(&self) -> usize {
        self.n
    }

    /// Half-open index ranges of the segments, left to right.
    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let n = self.n;
        self.starts.iter().enumerate().map(move |(k, &s)| {
            let end = if k + 1 < self.starts.len() {
                self.starts[k + 1]
            } else {
                n
            };
            s..end
        })
    }
}

/// Splits y into constant segments: a boundary sits between i and i+1
/// whenever |y_{i+1} - y_i| > seg_tol. A negative tolerance degenerates to
/// one segment per sample.
pub fn partition(y: &Signal, seg_tol: f64) -> Result<SegmentPartition, TvError> {
    if !seg_tol.is_finite() {
        return Err(TvError::NonFinite {
            context: "segment tolerance",
        });
    }
    let v = y.values();
    let mut starts = vec![0usize];
    for i in 0..v.len() - 1 {
        if (v[i + 1] - v[i]).abs() > seg_tol {
            starts.push(i + 1);
        }
    }
    Ok(SegmentPartition { starts, n: v.len() })
}

fn check_cotangent(y: &Signal, g: &Signal) -> Result<(), TvError> {
    if g.len() != y.len() {
        return Err(TvError::ShapeMismatch {
            context: "cotangent",
            expected: y.len(),
            got: g.len(),
        });
    }
    Ok(())
}

/// Vector-Jacobian product gᵀ (∂y/∂x) evaluated at the solution y:
/// replaces g by its mean on every segment of y. The projector is
/// symmetric, so this equals (∂y/∂x) g as well.
pub fn vjp_x(y: &Signal, g: &Signal, seg_tol: f64) -> Result<Signal, TvError> {
    check_cotangent(y, g)?;
    let parts = partition(y, seg_tol)?;
    let gv = g.values();
    let mut out = vec![0.0; gv.len()];
    for r in parts.ranges() {
        let len = r.len() as f64;
        let mean: f64 = gv[r.clone()].iter().sum::<f64>() / len;
        for o in &mut out[r] {
            *o = mean;
        }
    }
    Ok(Signal::from_trusted(out))
}

/// Sign of the jump into segment k (0 for the first segment).
fn jump_sign(yv: &[f64], start: usize) -> f64 {
    if start == 0 {
        0.0
    } else if yv[start] > yv[start - 1] {
        1.0
    } else {
        -1.0
    }
}

/// Scalar VJP gᵀ (∂y/∂lambda) at the solution y: each segment contributes
/// its cotangent mean times (s_R - s_L), the signed jump balance at its
/// two ends.
pub fn vjp_lambda(y: &Signal, g: &Signal, seg_tol: f64) -> Result<f64, TvError> {
    check_cotangent(y, g)?;
    let parts = partition(y, seg_tol)?;
    let yv = y.values();
    let gv = g.values();
    let starts = parts.starts();
    let mut total = 0.0;
    for (k, r) in parts.ranges().enumerate() {
        let s_l = jump_sign(yv, starts[k]);
        let s_r = if k + 1 < starts.len() {
            jump_sign(yv, starts[k + 1])
        } else {
            0.0
        };
        let mean: f64 = gv[r.clone()].iter().sum::<f64>() / r.len() as f64;
        total += mean * (s_r - s_l);
    }
    Ok(total)
}

/// Explicit-path size cap: the reference Jacobian is dense n x n.
pub const EXPLICIT_JACOBIAN_MAX_DIM: usize = 512;

// Dense Cholesky on a small SPD Gram matrix (row-major k x k): factor once,
// then O(k^2) per right-hand side. Only the explicit reference path uses it.
fn dense_chol(a: &mut [f64], k: usize) -> Result<(), TvError> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if d <= 1e-14 {
            return Err(TvError::NotPositiveDefinite { index: j, pivot: d });
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut v = a[i * k + j];
            for p in 0..j {
                v -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = v / d;
        }
    }
    Ok(())
}

fn dense_chol_solve(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut v = b[i];
        for p in 0..i {
            v -= l[i * k + p] * b[p];
        }
        b[i] = v / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = b[i];
        for p in i + 1..k {
            v -= l[p * k + i] * b[p];
        }
        b[i] = v / l[i * k + i];
    }
}

/// Gram matrix of the cumulative-sum basis restricted to segment starts:
/// G[a][b] = n - max(start_a, start_b).
fn gram(starts: &[usize], n: usize) -> Vec<f64> {
    let k = starts.len();
    let mut g = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            g[a * k + b] = (n - starts[a].max(starts[b])) as f64;
        }
    }
    g
}

/// Applies the n x k basis L (column j is the indicator of
/// [start_j, n)) to a coefficient vector.
fn basis_apply(starts: &[usize], n: usize, c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (j, &s) in starts.iter().enumerate() {
        for o in &mut out[s..] {
            *o += c[j];
        }
    }
    out
}

/// Explicit ∂y/∂x as a dense row-major n x n matrix, built from first
/// principles on the fixed partition (basis, Gram solve, projector).
/// Reference path for validating `vjp_x`; capped at 512 samples.
pub fn jacobian_x_explicit(y: &Signal, seg_tol: f64) -> Result<Vec<Vec<f64>>, TvError> {
    let n = y.len();
    if n > EXPLICIT_JACOBIAN_MAX_DIM {
        return Err(TvError::ShapeTooLarge {
            context: "explicit jacobian",
            max: EXPLICIT_JACOBIAN_MAX_DIM,
            got: n,
        });
    }
    let parts = partition(y, seg_tol)?;
    let starts = parts.starts();
    let k = starts.len();
    let mut l = gram(starts, n);
    dense_chol(&mut l, k)?;

    // Column i of the projector: basis * G^{-1} * basisᵀ * e_i.
    let mut cols = vec![vec![0.0; n]; n];
    for (i, col) in cols.iter_mut().enumerate() {
        let mut rhs: Vec<f64> = starts
            .iter()
            .map(|&s| if i >= s { 1.0 } else { 0.0 })
            .collect();
        dense_chol_solve(&l, k, &mut rhs);
        *col = basis_apply(starts, n, &rhs);
    }
    // cols[i] is column i; emit rows (the projector is symmetric, but build
    // it honestly rather than assuming that).
    let mut rows = vec![vec![0.0; n]; n];
    for (i, col) in cols.iter().enumerate() {
        for (j, &v) in col.iter().enumerate() {
            rows[j][i] = v;
        }
    }
    Ok(rows)
}

/// Explicit ∂y/∂lambda: differentiate the fixed-partition optimality
/// system G c = basisᵀ x - lambda s, giving dy = -basis G^{-1} s with
/// s_j the sign of the jump into segment j (s_0 = 0). Reference path for
/// `vjp_lambda`; capped at 512 samples.
pub fn jacobian_lambda_explicit(y: &Signal, seg_tol: f64) -> Result<Vec<f64>, TvError> {
    let n = y.len();
    if n > EXPLICIT_JACOBIAN_MAX_DIM {
        return Err(TvError::ShapeTooLarge {
            context: "explicit jacobian",
            max: EXPLICIT_JACOBIAN_MAX_DIM,
            got: n,
        });
    }
    let parts = partition(y, seg_tol)?;
    let starts = parts.starts();
    let k = starts.len();
    let mut l = gram(starts, n);
    dense_chol(&mut l, k)?;
    let mut s: Vec<f64> = starts.iter().map(|&st| jump_sign(y.values(), st)).collect();
    dense_chol_solve(&l, k, &mut s);
    Ok(basis_apply(starts, n, &s).iter().map(|v| -v).collect())
}

/// Dense solve helper shared with tests that want an extra-independent
/// check of the Gram solve (Gaussian elimination instead of Cholesky).
#[allow(dead_code)]
fn gram_solve_ge(starts: &[usize], n: usize, rhs: &[f64]) -> Result<Vec<f64>, TvError> {
    dense_solve_baseline(&gram(starts, n), rhs)
}
