//! Deterministic instance generators and slow reference oracles.
//!
//! Everything here exists so the fast solvers can be checked against
//! independently written baselines: a seedable RNG with a frozen stream,
//! piecewise-constant signal/image generators, projected-gradient dual
//! ascent oracles (self-contained difference code on purpose, sharing
//! nothing with the production solvers), central finite differences, and
//! a dense Gaussian-elimination solve used as the slow linear-algebra
//! baseline. The module ships in the library proper because the dense
//! baseline and generators also back the benchmark command.

use crate::error::TvError;
use crate::layer::{layer_backward, layer_forward};
use crate::types::{ChannelStack, ImagePlane, LayerParams, Signal};

/// SplitMix64: tiny, fast, and fully reproducible across platforms.
/// The stream for a given seed is frozen by a golden test; changing this
/// implementation invalidates every seeded expectation in the suite.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller, cosine branch only: consumes exactly
    /// two uniforms per call and discards the sine mate, which keeps the
    /// draw count per sample fixed and the stream easy to reason about.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]: ln(u1) is finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Shape of a random piecewise-constant instance.
#[derive(Debug, Clone, Copy)]
pub struct PiecewiseSpec {
    /// Requested number of constant segments (clamped to the axis length).
    pub num_segments: usize,
    /// Segment levels are `jump_scale * normal`.
    pub jump_scale: f64,
    /// Per-sample additive noise; exactly zero consumes no RNG draws.
    pub noise_sigma: f64,
}

impl Default for PiecewiseSpec {
    fn default() -> Self {
        PiecewiseSpec {
            num_segments: 4,
            jump_scale: 1.0,
            noise_sigma: 0.1,
        }
    }
}

/// Draws `count` distinct breakpoints in [1, n-1] by rejection, then sorts.
/// Draw order is part of the frozen stream contract.
fn distinct_breakpoints(rng: &mut SplitMix64, n: usize, count: usize) -> Vec<usize> {
    let mut picks: Vec<usize> = Vec::with_capacity(count);
    while picks.len() < count {
        let b = 1 + (rng.next_f64() * (n - 1) as f64) as usize;
        let b = b.min(n - 1);
        if !picks.contains(&b) {
            picks.push(b);
        }
    }
    picks.sort_unstable();
    picks
}

/// Piecewise-constant 1D signal: segment levels with optional Gaussian
/// noise. Draw order: breakpoints, then levels, then (if sigma > 0) one
/// noise draw per sample.
pub fn gen_signal(rng: &mut SplitMix64, n: usize, spec: &PiecewiseSpec) -> Signal {
    assert!(n >= 1, "empty signal requested");
    let s_eff = spec.num_segments.clamp(1, n);
    let breaks = distinct_breakpoints(rng, n, s_eff - 1);
    let levels: Vec<f64> = (0..s_eff)
        .map(|_| spec.jump_scale * rng.next_normal())
        .collect();

    let mut values = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        while seg < breaks.len() && i >= breaks[seg] {
            seg += 1;
        }
        values.push(levels[seg]);
    }
    if spec.noise_sigma > 0.0 {
        for v in values.iter_mut() {
            *v += spec.noise_sigma * rng.next_normal();
        }
    }
    Signal::new(values).expect("generated signal is finite")
}

/// Piecewise-constant 2D plane: row breakpoints, col breakpoints, one level
/// per block in row-major block order, then per-pixel noise.
pub fn gen_plane(
    rng: &mut SplitMix64,
    rows: usize,
    cols: usize,
    spec: &PiecewiseSpec,
) -> ImagePlane {
    assert!(rows >= 1 && cols >= 1, "empty plane requested");
    let sr = spec.num_segments.clamp(1, rows);
    let sc = spec.num_segments.clamp(1, cols);
    let row_breaks = distinct_breakpoints(rng, rows, sr - 1);
    let col_breaks = distinct_breakpoints(rng, cols, sc - 1);
    let levels: Vec<f64> = (0..sr * sc)
        .map(|_| spec.jump_scale * rng.next_normal())
        .collect();

    let mut values = Vec::with_capacity(rows * cols);
    let mut br = 0usize;
    for r in 0..rows {
        while br < row_breaks.len() && r >= row_breaks[br] {
            br += 1;
        }
        let mut bc = 0usize;
        for c in 0..cols {
            while bc < col_breaks.len() && c >= col_breaks[bc] {
                bc += 1;
            }
            values.push(levels[br * sc + bc]);
        }
    }
    if spec.noise_sigma > 0.0 {
        for v in values.iter_mut() {
            *v += spec.noise_sigma * rng.next_normal();
        }
    }
    ImagePlane::new(rows, cols, values).expect("generated plane is finite")
}

// Self-contained forward difference and its transpose for the oracles.
fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn diff_transpose(u: &[f64], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for (i, &ui) in u.iter().enumerate() {
        v[i] -= ui;
        v[i + 1] += ui;
    }
    v
}

fn clip(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

/// Projected gradient ascent on the box-constrained dual of the 1D problem.
/// Step 0.25 is safe: the dual Hessian D Dᵀ has spectral norm below 4.
/// Returns the recovered primal point and its final duality gap.
pub fn pgd_dual_oracle_1d(x: &Signal, lambda: f64, iters: usize) -> (Signal, f64) {
    let xv = x.values();
    let n = xv.len();
    if n == 1 || lambda == 0.0 {
        return (x.clone(), 0.0);
    }
    let mut u = vec![0.0; n - 1];
    let mut y;
    for _ in 0..iters {
        y = diff_transpose(&u, n);
        for (yi, xi) in y.iter_mut().zip(xv) {
            *yi = xi - *yi;
        }
        let g = diff(&y);
        for (ui, gi) in u.iter_mut().zip(&g) {
            *ui = clip(*ui + 0.25 * gi, lambda);
        }
    }
    y = diff_transpose(&u, n);
    for (yi, xi) in y.iter_mut().zip(xv) {
        *yi = xi - *yi;
    }
    let g = diff(&y);
    let gap: f64 = g
        .iter()
        .zip(&u)
        .map(|(gi, ui)| lambda * gi.abs() - ui * gi)
        .sum();
    (Signal::new(y).expect("oracle primal is finite"), gap)
}

/// Projected gradient ascent on the dual of the anisotropic 2D problem
/// (row TV plus column TV, one dual plane each). Step 0.125 is safe: the
/// combined dual Hessian norm is below 8. Returns primal and duality gap.
pub fn pgd_dual_oracle_2d(x: &ImagePlane, lambda: f64, iters: usize) -> (ImagePlane, f64) {
    let (m, n) = (x.rows(), x.cols());
    let xv = x.values();
    if lambda == 0.0 || (m == 1 && n == 1) {
        return (x.clone(), 0.0);
    }
    // u_row[r][0..n-1] pairs horizontal differences; u_col[0..m-1][c] vertical.
    let mut u_row = vec![0.0; m * n.saturating_sub(1)];
    let mut u_col = vec![0.0; m.saturating_sub(1) * n];
    let mut y = vec![0.0; m * n];

    let recover = |y: &mut [f64], u_row: &[f64], u_col: &[f64]| {
        y.copy_from_slice(xv);
        if n > 1 {
            for r in 0..m {
                for i in 0..n - 1 {
                    let u = u_row[r * (n - 1) + i];
                    y[r * n + i] += u;
                    y[r * n + i + 1] -= u;
                }
            }
        }
        if m > 1 {
            for j in 0..m - 1 {
                for c in 0..n {
                    let u = u_col[j * n + c];
                    y[j * n + c] += u;
                    y[(j + 1) * n + c] -= u;
                }
            }
        }
    };

    for _ in 0..iters {
        recover(&mut y, &u_row, &u_col);
        if n > 1 {
            for r in 0..m {
                for i in 0..n - 1 {
                    let g = y[r * n + i + 1] - y[r * n + i];
                    let u = &mut u_row[r * (n - 1) + i];
                    *u = clip(*u + 0.125 * g, lambda);
                }
            }
        }
        if m > 1 {
            for j in 0..m - 1 {
                for c in 0..n {
                    let g = y[(j + 1) * n + c] - y[j * n + c];
                    let u = &mut u_col[j * n + c];
                    *u = clip(*u + 0.125 * g, lambda);
                }
            }
        }
    }
    recover(&mut y, &u_row, &u_col);

    let mut gap = 0.0;
    if n > 1 {
        for r in 0..m {
            for i in 0..n - 1 {
                let g = y[r * n + i + 1] - y[r * n + i];
                gap += lambda * g.abs() - u_row[r * (n - 1) + i] * g;
            }
        }
    }
    if m > 1 {
        for j in 0..m - 1 {
            for c in 0..n {
                let g = y[(j + 1) * n + c] - y[j * n + c];
                gap += lambda * g.abs() - u_col[j * n + c] * g;
            }
        }
    }
    (
        ImagePlane::new(m, n, y).expect("oracle primal is finite"),
        gap,
    )
}

/// Central finite-difference gradient of a scalar function, step `h`.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Maximum dimension accepted by the dense baseline solver.
pub const DENSE_SOLVE_MAX_DIM: usize = 2048;

/// Gaussian elimination with partial pivoting on a dense row-major system.
/// Deliberately the textbook O(m³) loop with no structure exploitation:
/// this is the slow baseline that the tridiagonal path is measured against.
pub fn dense_solve_baseline(a: &[f64], b: &[f64]) -> Result<Vec<f64>, TvError> {
    let m = b.len();
    if a.len() != m * m {
        return Err(TvError::ShapeMismatch {
            context: "dense solve matrix",
            expected: m * m,
            got: a.len(),
        });
    }
    if m > DENSE_SOLVE_MAX_DIM {
        return Err(TvError::ShapeTooLarge {
            context: "dense solve",
            max: DENSE_SOLVE_MAX_DIM,
            got: m,
        });
    }
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..m {
        let mut piv = col;
        let mut best = a[col * m + col].abs();
        for r in col + 1..m {
            let v = a[r * m + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= 1e-12 {
            return Err(TvError::SingularMatrix { column: col });
        }
        if piv != col {
            for c in 0..m {
                a.swap(col * m + c, piv * m + c);
            }
            x.swap(col, piv);
        }
        let d = a[col * m + col];
        for r in col + 1..m {
            let factor = a[r * m + col] / d;
            for c in col..m {
                a[r * m + c] -= factor * a[col * m + c];
            }
            x[r] -= factor * x[col];
        }
    }
    for i in (0..m).rev() {
        let mut acc = x[i];
        for c in i + 1..m {
            acc -= a[i * m + c] * x[c];
        }
        x[i] = acc / a[i * m + i];
    }
    Ok(x)
}

fn half_mean_sq_diff(a: &ChannelStack, b: &ChannelStack) -> f64 {
    let count = a.values().len() as f64;
    0.5 * a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / count
}

/// Plain gradient descent on lambda_raw through the layer; the smallest
/// possible end-to-end trainability check. Loss is 0.5 * mean((y -
/// target)^2); the mean keeps step sizes image-size independent. Returns
/// the trained parameters and the loss trajectory: the loss before each
/// step plus the final loss, so `steps + 1` entries.
pub fn train_lambda_gd(
    noisy: &ChannelStack,
    target: &ChannelStack,
    params0: &LayerParams,
    steps: usize,
    step_size: f64,
) -> Result<(LayerParams, Vec<f64>), TvError> {
    if noisy.channels() != target.channels()
        || noisy.height() != target.height()
        || noisy.width() != target.width()
    {
        return Err(TvError::ShapeMismatch {
            context: "training target",
            expected: noisy.values().len(),
            got: target.values().len(),
        });
    }
    let count = noisy.values().len() as f64;
    let mut params = params0.clone();
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (y, saved) = layer_forward(noisy, &params)?;
        losses.push(half_mean_sq_diff(&y, target));
        let g = ChannelStack::from_trusted(
            noisy.channels(),
            noisy.height(),
            noisy.width(),
            y.values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) / count)
                .collect(),
        );
        let (_, graw) = layer_backward(&saved, &g)?;
        let new_raw: Vec<f64> = params
            .lambda_raw()
            .iter()
            .zip(&graw)
            .map(|(p, gr)| p - step_size * gr)
            .collect();
        params = LayerParams::new(
            new_raw,
            params.mode(),
            params.spatial(),
            params.dykstra_iters(),
        )?;
    }
    let (y, _) = layer_forward(noisy, &params)?;
    losses.push(half_mean_sq_diff(&y, target));
    Ok((params, losses))
}
