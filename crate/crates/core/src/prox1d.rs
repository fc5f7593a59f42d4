//! 1D total-variation proximal operator.
//!
//! Solves y = argmin_y 0.5 ||y - x||^2 + lambda * sum_i |y_{i+1} - y_i|
//! via two independent routes: a projected Newton method on the box
//! constrained dual (returns a dual certificate and per-solve stats), and
//! a direct taut-string pass (no certificate, typically faster). Both
//! agree to solver tolerance; the duality gap makes that checkable.
//!
//! Conventions: D is the (n-1) x n forward difference, (D y)_i =
//! y_{i+1} - y_i. The dual problem is max 0.5 ||x||^2 - 0.5 ||x - Dᵀu||^2
//! over ||u||_inf <= lambda (the constant term is dropped in code), with
//! primal recovery y = x - Dᵀu and gap(u) = sum_i lambda |(Dy)_i| -
//! u_i (Dy)_i, nonnegative whenever u is feasible and zero at the optimum.

use rayon::prelude::*;

use crate::error::TvError;
use crate::testkit::dense_solve_baseline;
use crate::tridiag::{chol_factor_solve_in_place, hessian_full, principal_submatrix, TridiagSpd};
use crate::types::{ActiveSet, DualVector, Signal};

pub(crate) fn diff_slice(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

pub(crate) fn diff_transpose_slice(u: &[f64], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for (i, &ui) in u.iter().enumerate() {
        v[i] -= ui;
        v[i + 1] += ui;
    }
    v
}

/// Forward differences of a signal; length n-1 (empty for n = 1).
pub fn apply_diff(x: &Signal) -> DualVector {
    DualVector::from_trusted(diff_slice(x.values()))
}

/// Adjoint of `apply_diff` mapping back to signal space of length `n`.
/// For n = 1 the result is the zero signal [0.0].
pub fn apply_diff_transpose(u: &DualVector, n: usize) -> Result<Signal, TvError> {
    if n == 0 {
        return Err(TvError::EmptyShape {
            context: "difference adjoint",
        });
    }
    if u.len() != n - 1 {
        return Err(TvError::ShapeMismatch {
            context: "difference adjoint",
            expected: n - 1,
            got: u.len(),
        });
    }
    Ok(Signal::from_trusted(diff_transpose_slice(u.values(), n)))
}

fn check_lambda(lambda: f64) -> Result<(), TvError> {
    if !lambda.is_finite() {
        return Err(TvError::NonFinite { context: "lambda" });
    }
    if lambda < 0.0 {
        return Err(TvError::NegativeLambda { value: lambda });
    }
    Ok(())
}

fn check_dual_shape(u: &DualVector, x: &Signal, context: &'static str) -> Result<(), TvError> {
    if u.len() != x.len() - 1 {
        return Err(TvError::ShapeMismatch {
            context,
            expected: x.len() - 1,
            got: u.len(),
        });
    }
    Ok(())
}

/// Dual objective phi(u) = -0.5 ||Dᵀu||^2 + uᵀ(Dx), without the constant
/// 0.5 ||x||^2 term (it cancels in every comparison the solver makes).
pub fn dual_objective(u: &DualVector, x: &Signal) -> Result<f64, TvError> {
    check_dual_shape(u, x, "dual objective")?;
    Ok(phi(u.values(), x.values()))
}

fn phi(u: &[f64], xv: &[f64]) -> f64 {
    let dtu = diff_transpose_slice(u, xv.len());
    let quad: f64 = dtu.iter().map(|v| v * v).sum();
    let lin: f64 = u
        .iter()
        .enumerate()
        .map(|(i, ui)| ui * (xv[i + 1] - xv[i]))
        .sum();
    lin - 0.5 * quad
}

/// Duality gap of a feasible dual point: sum_i lambda |g_i| - u_i g_i with
/// g = D(x - Dᵀu). Nonnegative for feasible u, zero exactly at the optimum.
/// Rejects u with |u_i| > lambda beyond a 1e-12 relative slack.
pub fn duality_gap(u: &DualVector, x: &Signal, lambda: f64) -> Result<f64, TvError> {
    check_lambda(lambda)?;
    check_dual_shape(u, x, "duality gap")?;
    let bound = lambda * (1.0 + 1e-12);
    for (i, &ui) in u.values().iter().enumerate() {
        if ui.abs() > bound {
            return Err(TvError::InfeasibleDual {
                index: i,
                value: ui,
                bound: lambda,
            });
        }
    }
    let xv = x.values();
    let dtu = diff_transpose_slice(u.values(), xv.len());
    let y: Vec<f64> = xv.iter().zip(&dtu).map(|(a, b)| a - b).collect();
    Ok(gap_terms(&diff_slice(&y), u.values(), lambda))
}

fn gap_terms(g: &[f64], u: &[f64], lambda: f64) -> f64 {
    g.iter()
        .zip(u)
        .map(|(gi, ui)| lambda * gi.abs() - ui * gi)
        .sum()
}

/// The dual certificate induced by an (exact) primal solution:
/// u_i = sum_{j <= i} (y_j - x_j), clamped into the feasible box. Feeding
/// it to `duality_gap` certifies solutions that come without a dual, such
/// as taut-string outputs.
pub fn induced_dual(x: &Signal, y: &Signal, lambda: f64) -> Result<DualVector, TvError> {
    check_lambda(lambda)?;
    if y.len() != x.len() {
        return Err(TvError::ShapeMismatch {
            context: "induced dual",
            expected: x.len(),
            got: y.len(),
        });
    }
    let mut u = Vec::with_capacity(x.len() - 1);
    let mut acc = 0.0;
    for i in 0..x.len() - 1 {
        acc += y.values()[i] - x.values()[i];
        u.push(acc.clamp(-lambda, lambda));
    }
    Ok(DualVector::from_trusted(u))
}

/// Tuning knobs of the projected Newton dual solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Iteration cap; hitting it is reported via stats, not an error.
    pub max_iters: usize,
    /// Convergence when gap <= gap_tol * (1 + ||x||^2).
    pub gap_tol: f64,
    /// Sufficient-ascent fraction in the line search.
    pub armijo_c: f64,
    /// Line-search steps below this fall back to projected gradient.
    pub step_floor: f64,
    /// Slack for classifying a coordinate as at its bound.
    pub active_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iters: 100,
            gap_tol: 1e-10,
            armijo_c: 1e-4,
            step_floor: 1e-12,
            active_tol: 1e-12,
        }
    }
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    /// Newton iterations executed (0 when the start point already passes).
    pub iters: usize,
    /// Duality gap at the returned point.
    pub gap: f64,
    /// False means the gap test was not met within max_iters; the returned
    /// point is then the best-gap iterate seen, not garbage.
    pub converged: bool,
}

/// One solved instance: the prox output, plus the dual certificate and
/// stats when the solving route produces them (Newton does, taut-string
/// does not).
#[derive(Debug, Clone, PartialEq)]
pub struct Prox1dSolve {
    pub y: Signal,
    pub dual: Option<DualVector>,
    pub stats: Option<SolveStats>,
}

/// Which 1D solver a batched call should use.
#[derive(Debug, Clone, PartialEq)]
pub enum Solver1d {
    /// Projected Newton with O(n) tridiagonal solves. The default.
    Newton(NewtonOptions),
    /// Direct taut-string pass; fastest, no dual certificate.
    TautString,
    /// Projected Newton with the dense O(n^3) linear solver. Exists only
    /// as the benchmark baseline; same iterates as `Newton` up to rounding.
    NewtonDenseBaseline(NewtonOptions),
}

impl Default for Solver1d {
    fn default() -> Self {
        Solver1d::Newton(NewtonOptions::default())
    }
}

type LinSolve = fn(&TridiagSpd, &[f64]) -> Result<Vec<f64>, TvError>;

fn solve_tridiag(sub: &TridiagSpd, rhs: &[f64]) -> Result<Vec<f64>, TvError> {
    let mut off = sub.off().to_vec();
    let mut x = rhs.to_vec();
    chol_factor_solve_in_place(sub.diag(), &mut off, &mut x)?;
    Ok(x)
}

fn solve_dense(sub: &TridiagSpd, rhs: &[f64]) -> Result<Vec<f64>, TvError> {
    let m = sub.dim();
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        a[i * m + i] = sub.diag()[i];
        if i + 1 < m {
            a[i * m + i + 1] = sub.off()[i];
            a[(i + 1) * m + i] = sub.off()[i];
        }
    }
    dense_solve_baseline(&a, rhs)
}

/// Identity short-circuit shared by every solver: lambda = 0 and n = 1
/// return the input bit-for-bit.
fn trivial_solve(x: &Signal) -> Prox1dSolve {
    Prox1dSolve {
        y: x.clone(),
        dual: Some(DualVector::from_trusted(vec![0.0; x.len() - 1])),
        stats: Some(SolveStats {
            iters: 0,
            gap: 0.0,
            converged: true,
        }),
    }
}

fn newton_core(
    x: &Signal,
    lambda: f64,
    opts: &NewtonOptions,
    solve: LinSolve,
) -> Result<Prox1dSolve, TvError> {
    check_lambda(lambda)?;
    let xv = x.values();
    let n = xv.len();
    if lambda == 0.0 || n == 1 {
        return Ok(trivial_solve(x));
    }
    let m = n - 1;
    let xsq: f64 = xv.iter().map(|v| v * v).sum();
    let tol = opts.gap_tol * (1.0 + xsq);
    let hess = hessian_full(n)?;

    let primal_grad = |u: &[f64]| {
        let dtu = diff_transpose_slice(u, n);
        let y: Vec<f64> = xv.iter().zip(&dtu).map(|(a, b)| a - b).collect();
        let g = diff_slice(&y);
        (y, g)
    };

    let mut u = vec![0.0; m];
    let (mut y, mut g) = primal_grad(&u);
    let mut gap = gap_terms(&g, &u, lambda);
    let mut best = (u.clone(), y.clone(), gap);
    let mut converged = gap <= tol;
    let mut iters = 0;

    while !converged && iters < opts.max_iters {
        iters += 1;
        // A coordinate is bound when it sits at the box edge and the
        // gradient pushes it further out; Newton moves only the rest.
        let free: Vec<usize> = (0..m)
            .filter(|&i| !(u[i].abs() >= lambda - opts.active_tol && u[i] * g[i] > 0.0))
            .collect();
        if free.is_empty() {
            break; // stationary: projection pins every coordinate
        }

        let mut stepped = false;
        let active = ActiveSet::new(free.clone(), m)?;
        let sub = principal_submatrix(&hess, &active)?;
        let rhs: Vec<f64> = free.iter().map(|&i| g[i]).collect();
        let d = solve(&sub, &rhs)?;
        let slope: f64 = rhs.iter().zip(&d).map(|(a, b)| a * b).sum();

        if slope > 0.0 {
            let phi0 = phi(&u, xv);
            let mut alpha = 1.0;
            for _ in 0..=50 {
                if alpha < opts.step_floor {
                    break;
                }
                let mut ut = u.clone();
                for (k, &i) in free.iter().enumerate() {
                    ut[i] = (u[i] + alpha * d[k]).clamp(-lambda, lambda);
                }
                let phit = phi(&ut, xv);
                // Ascent is measured against the projected step actually
                // taken, so clipping cannot fake progress.
                let moved: f64 = free.iter().map(|&i| g[i] * (ut[i] - u[i])).sum();
                if moved > 0.0 && phit >= phi0 + opts.armijo_c * moved {
                    u = ut;
                    stepped = true;
                    break;
                }
                let denom = 2.0 * (phi0 - phit + slope * alpha);
                let quad_min = if denom > 0.0 {
                    slope * alpha * alpha / denom
                } else {
                    0.5 * alpha
                };
                alpha = quad_min.clamp(0.1 * alpha, 0.5 * alpha);
            }
        }

        if !stepped {
            // Projected gradient fallback; step 0.25 <= 1 / ||D Dᵀ|| keeps
            // it an ascent step, so the solver cannot stall here unless u
            // is already stationary.
            let mut moved_any = false;
            for i in 0..m {
                let next = (u[i] + 0.25 * g[i]).clamp(-lambda, lambda);
                if next != u[i] {
                    moved_any = true;
                }
                u[i] = next;
            }
            if !moved_any {
                break;
            }
        }

        let (ny, ng) = primal_grad(&u);
        y = ny;
        g = ng;
        gap = gap_terms(&g, &u, lambda);
        if gap < best.2 {
            best = (u.clone(), y.clone(), gap);
        }
        converged = gap <= tol;
    }

    let (u_out, y_out, gap_out) = if converged { (u, y, gap) } else { best };
    Ok(Prox1dSolve {
        y: Signal::from_trusted(y_out),
        dual: Some(DualVector::from_trusted(u_out)),
        stats: Some(SolveStats {
            iters,
            gap: gap_out,
            converged,
        }),
    })
}

/// Projected Newton on the dual with tridiagonal Cholesky steps. Returns
/// the primal point, the dual certificate, and solve stats. Hitting
/// max_iters is not an error: the best-gap iterate comes back with
/// `stats.converged == false`.
pub fn prox_tv1d_newton(
    x: &Signal,
    lambda: f64,
    opts: &NewtonOptions,
) -> Result<Prox1dSolve, TvError> {
    newton_core(x, lambda, opts, solve_tridiag)
}

/// Identical Newton loop with the dense elimination solver inside; only
/// useful as the speed baseline the tridiagonal path is compared against.
pub fn prox_tv1d_newton_dense_baseline(
    x: &Signal,
    lambda: f64,
    opts: &NewtonOptions,
) -> Result<Prox1dSolve, TvError> {
    newton_core(x, lambda, opts, solve_dense)
}

/// Direct taut-string solver: one forward pass with backtracking segment
/// starts. Output is exact up to rounding. Worst-case rescanning is
/// quadratic, but on realistic signals it runs linearly and is the
/// fastest route when no dual certificate is needed.
pub fn prox_tv1d_tautstring(x: &Signal, lambda: f64) -> Result<Signal, TvError> {
    check_lambda(lambda)?;
    let xv = x.values();
    let n = xv.len();
    if lambda == 0.0 || n == 1 {
        return Ok(x.clone());
    }

    let mut y = vec![0.0; n];
    // k: scan position; k0: start of the running segment; kminus / kplus:
    // last positions where the lower / upper running sums touched their
    // bounds. vmin / vmax are candidate segment values, umin / umax the
    // accumulated slack against them.
    let mut k = 0usize;
    let mut k0 = 0usize;
    let mut kminus = 0usize;
    let mut kplus = 0usize;
    let mut vmin = xv[0] - lambda;
    let mut vmax = xv[0] + lambda;
    let mut umin = lambda;
    let mut umax = -lambda;

    loop {
        while k == n - 1 {
            if umin < 0.0 {
                // Lower candidate overshoots: close the segment at vmin.
                while k0 <= kminus {
                    y[k0] = vmin;
                    k0 += 1;
                }
                k = k0;
                kminus = k;
                vmin = xv[k];
                umin = lambda;
                umax = xv[k] + lambda - vmax;
            } else if umax > 0.0 {
                // Upper candidate undershoots: close the segment at vmax.
                while k0 <= kplus {
                    y[k0] = vmax;
                    k0 += 1;
                }
                k = k0;
                kplus = k;
                vmax = xv[k];
                umax = -lambda;
                umin = xv[k] - lambda - vmin;
            } else {
                // Both slacks balanced: flush the tail at the mean level.
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    y[k0] = vmin;
                    k0 += 1;
                }
                return Ok(Signal::from_trusted(y));
            }
        }

        umin += xv[k + 1] - vmin;
        umax += xv[k + 1] - vmax;
        if umin < -lambda {
            // Forced downward jump at kminus: emit [k0, kminus] at vmin and
            // restart right after it, pinned to the lower envelope.
            while k0 <= kminus {
                y[k0] = vmin;
                k0 += 1;
            }
            k = k0;
            kminus = k;
            kplus = k;
            vmin = xv[k];
            vmax = xv[k] + 2.0 * lambda;
            umin = lambda;
            umax = -lambda;
        } else if umax > lambda {
            // Forced upward jump at kplus, pinned to the upper envelope.
            while k0 <= kplus {
                y[k0] = vmax;
                k0 += 1;
            }
            k = k0;
            kminus = k;
            kplus = k;
            vmax = xv[k];
            vmin = xv[k] - 2.0 * lambda;
            umin = lambda;
            umax = -lambda;
        } else {
            k += 1;
            if umin >= lambda {
                kminus = k;
                vmin += (umin - lambda) / (k - k0 + 1) as f64;
                umin = lambda;
            }
            if umax <= -lambda {
                kplus = k;
                vmax += (umax + lambda) / (k - k0 + 1) as f64;
                umax = -lambda;
            }
        }
    }
}

fn solve_one(x: &Signal, lambda: f64, solver: &Solver1d) -> Result<Prox1dSolve, TvError> {
    match solver {
        Solver1d::Newton(opts) => prox_tv1d_newton(x, lambda, opts),
        Solver1d::NewtonDenseBaseline(opts) => prox_tv1d_newton_dense_baseline(x, lambda, opts),
        Solver1d::TautString => Ok(Prox1dSolve {
            y: prox_tv1d_tautstring(x, lambda)?,
            dual: None,
            stats: None,
        }),
    }
}

/// Batched prox with the default Newton solver; signals may have mixed
/// lengths. Errors carry the index of the offending signal. Solves run in
/// parallel; outputs are positional, so results do not depend on the
/// worker count.
pub fn prox_tv1d_batch(xs: &[Signal], lambda: f64) -> Result<Vec<Signal>, TvError> {
    let solves = prox_tv1d_batch_with(xs, lambda, &Solver1d::default())?;
    Ok(solves.into_iter().map(|s| s.y).collect())
}

/// Batched prox with an explicit solver choice, returning full per-signal
/// results (dual certificates and stats where the solver provides them).
pub fn prox_tv1d_batch_with(
    xs: &[Signal],
    lambda: f64,
    solver: &Solver1d,
) -> Result<Vec<Prox1dSolve>, TvError> {
    check_lambda(lambda)?;
    let results: Vec<Result<Prox1dSolve, TvError>> = xs
        .par_iter()
        .map(|x| solve_one(x, lambda, solver))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|e| e.in_batch(i))?);
    }
    Ok(out)
}
