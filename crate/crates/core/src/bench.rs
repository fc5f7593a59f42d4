//! Timing harness comparing the 1D solver variants on identical batches.
//!
//! Instances are a unit step (jump at n/2) plus Gaussian noise, one frozen
//! stream per size, so every solver sees exactly the same data. The dense
//! Newton baseline exists to quantify what the tridiagonal solves buy; it
//! is skipped (not failed) for sizes beyond the dense solver's cap.

use std::time::Instant;

use crate::error::TvError;
use crate::prox1d::{prox_tv1d_batch_with, NewtonOptions, Solver1d};
use crate::testkit::{SplitMix64, DENSE_SOLVE_MAX_DIM};
use crate::types::Signal;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Signal lengths to measure.
    pub sizes: Vec<usize>,
    /// Signals per batch; one timed repetition solves the whole batch.
    pub batch: usize,
    /// Timed repetitions per solver (after one untimed warmup).
    pub reps: usize,
    pub lambda: f64,
    pub seed: u64,
    pub noise_sigma: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![64, 256],
            batch: 8,
            reps: 5,
            lambda: 1.0,
            seed: 0,
            noise_sigma: 0.1,
        }
    }
}

/// One measured (solver, size) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub solver: &'static str,
    pub n: usize,
    pub batch: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Dense-baseline mean divided by this row's mean; None when the dense
    /// baseline was skipped at this size.
    pub speedup: Option<f64>,
}

fn step_instances(n: usize, batch: usize, sigma: f64, seed: u64) -> Vec<Signal> {
    // One stream per size so adding sizes never shifts other instances.
    let mut rng = SplitMix64::new(seed ^ (n as u64).wrapping_mul(0x9E3779B97F4A7C15));
    (0..batch)
        .map(|_| {
            let mut v = Vec::with_capacity(n);
            for i in 0..n {
                let base = if i < n / 2 { 0.0 } else { 1.0 };
                let noise = if sigma > 0.0 {
                    sigma * rng.next_normal()
                } else {
                    0.0
                };
                v.push(base + noise);
            }
            Signal::new(v).expect("bench instance is finite")
        })
        .collect()
}

fn time_solver(
    xs: &[Signal],
    lambda: f64,
    solver: &Solver1d,
    reps: usize,
) -> Result<(f64, f64), TvError> {
    std::hint::black_box(prox_tv1d_batch_with(xs, lambda, solver)?); // warmup
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        std::hint::black_box(prox_tv1d_batch_with(xs, lambda, solver)?);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / reps as f64;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / reps as f64;
    Ok((mean, var.sqrt()))
}

/// Runs the whole grid. Rows come out grouped by size in the order
/// newton, tautstring, newton-dense; the dense row is omitted for sizes
/// whose Newton system exceeds the dense solver's cap.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>, TvError> {
    if config.sizes.is_empty() {
        return Err(TvError::EmptyShape {
            context: "bench sizes",
        });
    }
    if config.sizes.contains(&0) {
        return Err(TvError::EmptyShape {
            context: "bench size",
        });
    }
    if config.batch == 0 {
        return Err(TvError::ShapeTooSmall {
            context: "bench batch",
            min: 1,
            got: 0,
        });
    }
    if config.reps == 0 {
        return Err(TvError::ShapeTooSmall {
            context: "bench reps",
            min: 1,
            got: 0,
        });
    }
    if !config.lambda.is_finite() || !config.noise_sigma.is_finite() {
        return Err(TvError::NonFinite {
            context: "bench config",
        });
    }
    if config.lambda < 0.0 {
        return Err(TvError::NegativeLambda {
            value: config.lambda,
        });
    }
    if config.noise_sigma < 0.0 {
        return Err(TvError::NegativeLambda {
            value: config.noise_sigma,
        });
    }

    let opts = NewtonOptions::default();
    let mut rows = Vec::new();
    for &n in &config.sizes {
        let xs = step_instances(n, config.batch, config.noise_sigma, config.seed);
        let with_dense = n.saturating_sub(1) <= DENSE_SOLVE_MAX_DIM;

        let (newton_mean, newton_std) =
            time_solver(&xs, config.lambda, &Solver1d::Newton(opts), config.reps)?;
        let (taut_mean, taut_std) =
            time_solver(&xs, config.lambda, &Solver1d::TautString, config.reps)?;
        let dense = if with_dense {
            Some(time_solver(
                &xs,
                config.lambda,
                &Solver1d::NewtonDenseBaseline(opts),
                config.reps,
            )?)
        } else {
            None
        };

        let speedup_of = |mean: f64| dense.map(|(dm, _)| dm / mean);
        rows.push(BenchRow {
            solver: "newton",
            n,
            batch: config.batch,
            mean_ms: newton_mean,
            std_ms: newton_std,
            speedup: speedup_of(newton_mean),
        });
        rows.push(BenchRow {
            solver: "tautstring",
            n,
            batch: config.batch,
            mean_ms: taut_mean,
            std_ms: taut_std,
            speedup: speedup_of(taut_mean),
        });
        if let Some((dm, ds)) = dense {
            rows.push(BenchRow {
                solver: "newton-dense",
                n,
                batch: config.batch,
                mean_ms: dm,
                std_ms: ds,
                speedup: Some(1.0),
            });
        }
    }
    Ok(rows)
}

/// CSV rendering with the stable header
/// `solver,n,batch,mean_ms,std_ms,speedup`; a skipped speedup is an empty
/// field.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("solver,n,batch,mean_ms,std_ms,speedup\n");
    for r in rows {
        let speedup = r.speedup.map(|s| format!("{s:.3}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4},{}\n",
            r.solver, r.n, r.batch, r.mean_ms, r.std_ms, speedup
        ));
    }
    out
}
