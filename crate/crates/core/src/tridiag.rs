//! Symmetric positive-definite tridiagonal systems.
//!
//! The Newton step of the 1D dual solver needs principal submatrices of
//! H = D Dᵀ (diagonal 2, off-diagonal -1) factored and solved in O(m).
//! Every principal submatrix of H is again tridiagonal and SPD, so a plain
//! Cholesky with no pivoting is exact here; the pivot threshold guards
//! against misuse with non-SPD input.

use crate::error::TvError;
use crate::types::ActiveSet;

/// A symmetric tridiagonal matrix stored as its diagonal and first
/// off-diagonal. `off.len() == diag.len() - 1`; both empty encodes the
/// 0 x 0 matrix (legal: an empty free set has an empty Newton system).
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagSpd {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl TridiagSpd {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self, TvError> {
        let expected = diag.len().saturating_sub(1);
        if off.len() != expected {
            return Err(TvError::ShapeMismatch {
                context: "tridiagonal off-diagonal",
                expected,
                got: off.len(),
            });
        }
        if diag.iter().chain(off.iter()).any(|v| !v.is_finite()) {
            return Err(TvError::NonFinite {
                context: "tridiagonal matrix",
            });
        }
        Ok(TridiagSpd { diag, off })
    }

    pub(crate) fn from_trusted(diag: Vec<f64>, off: Vec<f64>) -> Self {
        debug_assert_eq!(off.len(), diag.len().saturating_sub(1));
        TridiagSpd { diag, off }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    /// y = T x.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, TvError> {
        let m = self.dim();
        if x.len() != m {
            return Err(TvError::ShapeMismatch {
                context: "tridiagonal matvec",
                expected: m,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; m];
        for i in 0..m {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < m {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
        Ok(y)
    }
}

/// Cholesky factor T = L Lᵀ of a tridiagonal SPD matrix; L is lower
/// bidiagonal with diagonal `l_diag` and subdiagonal `l_off`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    l_diag: Vec<f64>,
    l_off: Vec<f64>,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.l_diag.len()
    }

    pub fn l_diag(&self) -> &[f64] {
        &self.l_diag
    }

    pub fn l_off(&self) -> &[f64] {
        &self.l_off
    }
}

/// Dual Hessian H = D Dᵀ for a signal of length `n`: the (n-1) x (n-1)
/// tridiagonal matrix with diagonal 2 and off-diagonal -1.
pub fn hessian_full(n: usize) -> Result<TridiagSpd, TvError> {
    if n < 2 {
        return Err(TvError::ShapeTooSmall {
            context: "dual Hessian",
            min: 2,
            got: n,
        });
    }
    let m = n - 1;
    Ok(TridiagSpd::from_trusted(vec![2.0; m], vec![-1.0; m - 1]))
}

/// Extracts the principal submatrix on the rows/columns in `active`.
///
/// Off-diagonal entries survive only where two kept indices were adjacent
/// in the original matrix; any gap breaks the coupling and the retained
/// off-diagonal entry is 0.
pub fn principal_submatrix(t: &TridiagSpd, active: &ActiveSet) -> Result<TridiagSpd, TvError> {
    let idx = active.indices();
    let m = t.dim();
    if let Some(&last) = idx.last() {
        if last >= m {
            return Err(TvError::IndexOutOfBounds {
                index: last,
                dim: m,
            });
        }
    }
    let mut diag = Vec::with_capacity(idx.len());
    let mut off = Vec::with_capacity(idx.len().saturating_sub(1));
    for (k, &i) in idx.iter().enumerate() {
        diag.push(t.diag[i]);
        if k + 1 < idx.len() {
            off.push(if idx[k + 1] == i + 1 { t.off[i] } else { 0.0 });
        }
    }
    Ok(TridiagSpd::from_trusted(diag, off))
}

const PIVOT_MIN: f64 = 1e-14;

/// Destructive factorization kernel: on success `diag` holds the Cholesky
/// diagonal and `off` the subdiagonal of L. `off` must be one shorter than
/// `diag` (zero-length `diag` is legal and a no-op). Working in place keeps
/// large solves inside cache and off the allocator.
pub fn chol_factor_in_place(diag: &mut [f64], off: &mut [f64]) -> Result<(), TvError> {
    let m = diag.len();
    if off.len() != m.saturating_sub(1) {
        return Err(TvError::ShapeMismatch {
            context: "cholesky factor bands",
            expected: m.saturating_sub(1),
            got: off.len(),
        });
    }
    for i in 0..m {
        let mut pivot = diag[i];
        if i > 0 {
            let lo = off[i - 1];
            pivot -= lo * lo;
        }
        if pivot <= PIVOT_MIN {
            return Err(TvError::NotPositiveDefinite { index: i, pivot });
        }
        let d = pivot.sqrt();
        diag[i] = d;
        if i + 1 < m {
            off[i] /= d;
        }
    }
    Ok(())
}

/// Factors and solves in one shot: `diag`/`off` arrive as the matrix bands,
/// `x` arrives as the right-hand side and leaves as the solution. Internally
/// this is the square-root-free L D Lᵀ form of the Cholesky sweep: the pivot
/// d_i is the same quantity `chol_factor` tests (so the error contract is
/// unchanged), but no square root enters the recurrence and the backward
/// substitution needs no division, which roughly halves the serial
/// dependency chain per element. `diag` is only read; `off` is consumed as
/// scratch (it leaves as the unit subdiagonal of L), so the backward sweep
/// touches two arrays instead of three. This is the primitive behind each
/// Newton step.
pub fn chol_factor_solve_in_place(
    diag: &[f64],
    off: &mut [f64],
    x: &mut [f64],
) -> Result<(), TvError> {
    let m = diag.len();
    if off.len() != m.saturating_sub(1) {
        return Err(TvError::ShapeMismatch {
            context: "cholesky factor bands",
            expected: m.saturating_sub(1),
            got: off.len(),
        });
    }
    if x.len() != m {
        return Err(TvError::ShapeMismatch {
            context: "cholesky solve rhs",
            expected: m,
            got: x.len(),
        });
    }
    if m == 0 {
        return Ok(());
    }
    // Forward sweep: the pivot stays in a register, the forward substitution
    // and the D⁻¹ scale ride along, so x leaves as D⁻¹ L⁻¹ b.
    let mut d = diag[0];
    if d <= PIVOT_MIN {
        return Err(TvError::NotPositiveDefinite { index: 0, pivot: d });
    }
    let mut z = x[0];
    x[0] = z / d;
    for i in 1..m {
        let o = off[i - 1];
        let l = o / d;
        off[i - 1] = l;
        let pivot = diag[i] - l * o;
        if pivot <= PIVOT_MIN {
            return Err(TvError::NotPositiveDefinite { index: i, pivot });
        }
        d = pivot;
        z = x[i] - l * z;
        x[i] = z / d;
    }
    // Backward sweep: Lᵀ y = D⁻¹ L⁻¹ b with unit diagonal.
    for i in (0..m - 1).rev() {
        x[i] -= off[i] * x[i + 1];
    }
    Ok(())
}

/// Solves L Lᵀ x = b in place, with b arriving in `x`. The bands are the
/// output of [`chol_factor_in_place`] (or a [`CholFactor`]'s slices).
pub fn chol_solve_in_place(l_diag: &[f64], l_off: &[f64], x: &mut [f64]) -> Result<(), TvError> {
    let m = l_diag.len();
    if l_off.len() != m.saturating_sub(1) {
        return Err(TvError::ShapeMismatch {
            context: "cholesky solve bands",
            expected: m.saturating_sub(1),
            got: l_off.len(),
        });
    }
    if x.len() != m {
        return Err(TvError::ShapeMismatch {
            context: "cholesky solve rhs",
            expected: m,
            got: x.len(),
        });
    }
    for i in 0..m {
        if i > 0 {
            x[i] -= l_off[i - 1] * x[i - 1];
        }
        x[i] /= l_diag[i];
    }
    for i in (0..m).rev() {
        if i + 1 < m {
            x[i] -= l_off[i] * x[i + 1];
        }
        x[i] /= l_diag[i];
    }
    Ok(())
}

/// Cholesky factorization in O(m). Fails with the offending index and
/// pivot value when a pivot drops to 1e-14 or below.
pub fn chol_factor(t: &TridiagSpd) -> Result<CholFactor, TvError> {
    let mut l_diag = t.diag.clone();
    let mut l_off = t.off.clone();
    chol_factor_in_place(&mut l_diag, &mut l_off)?;
    Ok(CholFactor { l_diag, l_off })
}

/// Solves L Lᵀ x = b by forward then back substitution, O(m).
pub fn chol_solve(f: &CholFactor, b: &[f64]) -> Result<Vec<f64>, TvError> {
    let mut x = b.to_vec();
    chol_solve_in_place(&f.l_diag, &f.l_off, &mut x)?;
    Ok(x)
}
