//! Command line front end. Images move through PGM/PPM files; everything
//! else is printed to stdout so the tool composes in shell pipelines.
//!
//! Exit codes: 0 success, 1 file or internal failure, 2 solver finished
//! without a certified gap (output is still written), 3 gradient check out
//! of tolerance, 64 bad flags or bad configuration.

use std::path::PathBuf;
use std::sync::Once;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{bench_csv, run_bench, BenchConfig};
use crate::error::{PassAxis, TvError};
use crate::imgio::{add_gaussian_noise, psnr, read_pnm, write_pnm, PnmWriteOptions, RasterImage};
use crate::prox1d::{NewtonOptions, Solver1d};
use crate::prox2d::{prox_pass, prox_tv2d_dykstra, DykstraOptions, DEFAULT_DYKSTRA_ITERS};
use crate::testkit::{finite_diff_grad, gen_plane, PiecewiseSpec, SplitMix64};
use crate::types::{ChannelStack, ImagePlane, LayerMode, LayerParams, SpatialMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_GRADCHECK_FAILED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Finite-difference instances larger than this take minutes; refuse them
/// up front instead of appearing to hang.
const GRADCHECK_MAX_ELEMENTS: usize = 4096;

#[derive(Parser, Debug)]
#[command(
    name = "tvprox",
    version,
    about = "Total-variation smoothing, sharpening and evaluation for PGM/PPM images"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Smooth an image with the total-variation proximal operator.
    Smooth(FilterArgs),
    /// Sharpen an image (original plus the residual the smoother removed).
    Sharpen(FilterArgs),
    /// Add synthetic noise to a clean image, denoise, report both PSNRs.
    #[command(name = "denoise-eval")]
    DenoiseEval(DenoiseArgs),
    /// Compare analytic layer gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the 1D solver variants on synthetic batches.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Input image (P2/P5 PGM or P3/P6 PPM).
    #[arg(long)]
    input: PathBuf,
    /// Output image path (written as binary, 8 bits per sample).
    #[arg(long)]
    output: PathBuf,
    /// Smoothing strength; one value shared by all channels or one per
    /// channel, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    lambda: Vec<f64>,
    #[arg(long, value_enum, default_value_t = SpatialArg::TwoD)]
    spatial: SpatialArg,
    /// Alternating-projection sweeps used by the 2d mode.
    #[arg(long, default_value_t = DEFAULT_DYKSTRA_ITERS)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = SolverArg::Newton)]
    solver: SolverArg,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    /// Clean reference image.
    #[arg(long)]
    input: PathBuf,
    /// Optional path for the denoised image at the best sweep strength.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Standard deviation of the synthetic noise, in [0,1] sample units.
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sweep of smoothing strengths; every channel shares each value and
    /// the report carries one row per value.
    #[arg(long, value_delimiter = ',', required = true)]
    lambda: Vec<f64>,
    #[arg(long, value_enum, default_value_t = SpatialArg::TwoD)]
    spatial: SpatialArg,
    #[arg(long, default_value_t = DEFAULT_DYKSTRA_ITERS)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = SolverArg::Newton)]
    solver: SolverArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Instance shape as CxHxW.
    #[arg(long, default_value = "1x8x8", value_parser = parse_shape)]
    shape: ShapeArg,
    /// Pre-activation strength; the effective strength is its softplus.
    /// Negative values are the normal way to request a small lambda.
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    lambda_raw: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Smooth)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = SpatialArg::TwoD)]
    spatial: SpatialArg,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted relative error between analytic and
    /// finite-difference gradients.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Signal lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,256")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SpatialArg {
    #[value(name = "2d")]
    TwoD,
    Rows,
    Cols,
}

impl SpatialArg {
    fn to_spatial(self) -> SpatialMode {
        match self {
            SpatialArg::TwoD => SpatialMode::TwoD,
            SpatialArg::Rows => SpatialMode::Rows,
            SpatialArg::Cols => SpatialMode::Cols,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SolverArg {
    Newton,
    Tautstring,
}

impl SolverArg {
    fn to_solver(self) -> Solver1d {
        match self {
            SolverArg::Newton => Solver1d::Newton(NewtonOptions::default()),
            SolverArg::Tautstring => Solver1d::TautString,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Smooth,
    Sharpen,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FormatArg {
    Text,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ShapeArg {
    channels: usize,
    height: usize,
    width: usize,
}

fn parse_shape(s: &str) -> Result<ShapeArg, String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected CxHxW, got '{s}'"));
    }
    let mut dims = [0usize; 3];
    for (slot, part) in dims.iter_mut().zip(&parts) {
        *slot = part
            .parse::<usize>()
            .map_err(|_| format!("'{part}' is not a dimension"))?;
        if *slot == 0 {
            return Err("dimensions must be at least 1".to_string());
        }
    }
    Ok(ShapeArg {
        channels: dims[0],
        height: dims[1],
        width: dims[2],
    })
}

/// Applies TVPROX_THREADS once per process. 0 or unset keeps the library
/// default (one worker per logical CPU).
fn configure_threads() {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        let Ok(raw) = std::env::var("TVPROX_THREADS") else {
            return;
        };
        match raw.trim().parse::<usize>() {
            Ok(0) => {}
            Ok(k) => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                {
                    eprintln!("warning: could not size the thread pool: {e}");
                }
            }
            Err(_) => {
                eprintln!("warning: TVPROX_THREADS='{raw}' is not a number; using default");
            }
        }
    });
}

fn usage_fail(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

fn io_fail(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    EXIT_IO
}

fn check_lambdas(lambdas: &[f64]) -> Result<(), String> {
    for &l in lambdas {
        if !l.is_finite() {
            return Err(format!("--lambda {l} is not finite"));
        }
        if l < 0.0 {
            return Err(format!("--lambda {l} is negative"));
        }
    }
    Ok(())
}

fn check_channel_count(lambdas: &[f64], channels: usize) -> Result<(), String> {
    if lambdas.len() != 1 && lambdas.len() != channels {
        return Err(format!(
            "--lambda needs 1 or {channels} values for this image, got {}",
            lambdas.len()
        ));
    }
    Ok(())
}

struct ChannelReport {
    lambda: f64,
    max_gap: f64,
    converged: bool,
}

/// Runs the smoother on every channel and, for sharpen, reflects the input
/// through the smoothed result. Reports come back per channel so the caller
/// can decide between exit 0 and exit 2.
fn filter_stack(
    stack: &ChannelStack,
    lambdas: &[f64],
    mode: LayerMode,
    spatial: SpatialArg,
    iters: usize,
    solver: &Solver1d,
) -> Result<(ChannelStack, Vec<ChannelReport>), TvError> {
    let opts = DykstraOptions {
        solver: solver.clone(),
        ..DykstraOptions::default()
    };
    let mut planes = Vec::with_capacity(stack.channels());
    let mut reports = Vec::with_capacity(stack.channels());
    for c in 0..stack.channels() {
        let lambda = if lambdas.len() == 1 {
            lambdas[0]
        } else {
            lambdas[c]
        };
        let x = stack.channel(c);
        let (smooth, max_gap, converged) = match spatial {
            SpatialArg::TwoD => {
                let (y, tape) = prox_tv2d_dykstra(&x, lambda, iters, &opts)?;
                let d = tape.diagnostics();
                (y, d.max_gap, d.all_converged)
            }
            SpatialArg::Rows | SpatialArg::Cols => {
                let axis = match spatial {
                    SpatialArg::Rows => PassAxis::Rows,
                    _ => PassAxis::Cols,
                };
                let pass = prox_pass(&x, axis, lambda, &opts.solver, 0)?;
                (pass.plane, pass.max_gap, pass.all_converged)
            }
        };
        let out = match mode {
            LayerMode::Smooth => smooth,
            LayerMode::Sharpen => {
                let vals = x
                    .values()
                    .iter()
                    .zip(smooth.values())
                    .map(|(&orig, &s)| 2.0 * orig - s)
                    .collect();
                ImagePlane::new(x.rows(), x.cols(), vals)?
            }
        };
        planes.push(out);
        reports.push(ChannelReport {
            lambda,
            max_gap,
            converged,
        });
    }
    Ok((ChannelStack::from_planes(&planes)?, reports))
}

fn print_reports(reports: &[ChannelReport]) {
    for (c, r) in reports.iter().enumerate() {
        println!(
            "channel {c}: lambda={} max_gap={:.3e} converged={}",
            r.lambda, r.max_gap, r.converged
        );
    }
}

fn finish_with_reports(reports: &[ChannelReport]) -> i32 {
    if reports.iter().any(|r| !r.converged) {
        eprintln!("warning: duality gap above tolerance on some lines; output written anyway");
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    }
}

fn cmd_filter(args: &FilterArgs, mode: LayerMode) -> i32 {
    if let Err(msg) = check_lambdas(&args.lambda) {
        return usage_fail(&msg);
    }
    if args.iters == 0 {
        return usage_fail("--iters must be at least 1");
    }
    let img = match read_pnm(&args.input) {
        Ok(i) => i,
        Err(e) => return io_fail(&format!("reading {}: {e}", args.input.display())),
    };
    if let Err(msg) = check_channel_count(&args.lambda, img.channels()) {
        return usage_fail(&msg);
    }
    let stack = img.to_stack();
    let (out, reports) = match filter_stack(
        &stack,
        &args.lambda,
        mode,
        args.spatial,
        args.iters,
        &args.solver.to_solver(),
    ) {
        Ok(v) => v,
        Err(e) => return io_fail(&format!("solve failed: {e}")),
    };
    let out_img = match RasterImage::from_stack_clamped(&out) {
        Ok(i) => i,
        Err(e) => return io_fail(&format!("assembling output: {e}")),
    };
    if let Err(e) = write_pnm(&args.output, &out_img, PnmWriteOptions::default()) {
        return io_fail(&format!("writing {}: {e}", args.output.display()));
    }
    let spatial_label = match args.spatial {
        SpatialArg::TwoD => "2d",
        SpatialArg::Rows => "rows",
        SpatialArg::Cols => "cols",
    };
    println!(
        "spatial={spatial_label} iters={} solver={}",
        args.iters,
        match args.solver {
            SolverArg::Newton => "newton",
            SolverArg::Tautstring => "tautstring",
        }
    );
    print_reports(&reports);
    println!(
        "wrote {} ({}x{}, {} channels)",
        args.output.display(),
        out_img.width(),
        out_img.height(),
        out_img.channels()
    );
    finish_with_reports(&reports)
}

fn cmd_denoise_eval(args: &DenoiseArgs) -> i32 {
    if let Err(msg) = check_lambdas(&args.lambda) {
        return usage_fail(&msg);
    }
    if !args.sigma.is_finite() || args.sigma < 0.0 {
        return usage_fail(&format!(
            "--sigma {} must be finite and nonnegative",
            args.sigma
        ));
    }
    if args.iters == 0 {
        return usage_fail("--iters must be at least 1");
    }
    let clean = match read_pnm(&args.input) {
        Ok(i) => i,
        Err(e) => return io_fail(&format!("reading {}: {e}", args.input.display())),
    };
    let noisy = add_gaussian_noise(&clean, args.sigma, args.seed);
    let noisy_stack = noisy.to_stack();
    // Metrics describe images exactly as they would be written: clamped.
    let psnr_noisy = psnr(&clean, &noisy).expect("same shape by construction");

    struct SweepRow {
        lambda: f64,
        psnr_denoised: f64,
    }
    let mut rows: Vec<SweepRow> = Vec::with_capacity(args.lambda.len());
    let mut best: Option<(usize, RasterImage)> = None;
    let mut all_converged = true;
    for &lambda in &args.lambda {
        let (den_stack, reports) = match filter_stack(
            &noisy_stack,
            &[lambda],
            LayerMode::Smooth,
            args.spatial,
            args.iters,
            &args.solver.to_solver(),
        ) {
            Ok(v) => v,
            Err(e) => return io_fail(&format!("solve failed at lambda={lambda}: {e}")),
        };
        all_converged &= reports.iter().all(|r| r.converged);
        let denoised = match RasterImage::from_stack_clamped(&den_stack) {
            Ok(i) => i,
            Err(e) => return io_fail(&format!("assembling output: {e}")),
        };
        let psnr_denoised = psnr(&clean, &denoised).expect("same shape by construction");
        let better = match &best {
            None => true,
            Some((idx, _)) => psnr_denoised > rows[*idx].psnr_denoised,
        };
        if better {
            best = Some((rows.len(), denoised));
        }
        rows.push(SweepRow {
            lambda,
            psnr_denoised,
        });
    }
    let (best_idx, best_img) = best.expect("at least one lambda is required");

    if let Some(path) = &args.output {
        if let Err(e) = write_pnm(path, &best_img, PnmWriteOptions::default()) {
            return io_fail(&format!("writing {}: {e}", path.display()));
        }
    }
    match args.format {
        FormatArg::Text => {
            println!("sigma={} seed={}", args.sigma, args.seed);
            println!(
                "{:>10} {:>14} {:>17}",
                "lambda", "psnr_noisy_db", "psnr_denoised_db"
            );
            for r in &rows {
                println!(
                    "{:>10} {:>14.4} {:>17.4}",
                    r.lambda, psnr_noisy, r.psnr_denoised
                );
            }
            println!(
                "best: lambda={} psnr_denoised_db={:.4}",
                rows[best_idx].lambda, rows[best_idx].psnr_denoised
            );
        }
        FormatArg::Csv => {
            println!("lambda,psnr_noisy_db,psnr_denoised_db,best");
            for (i, r) in rows.iter().enumerate() {
                println!(
                    "{},{psnr_noisy:.4},{:.4},{}",
                    r.lambda,
                    r.psnr_denoised,
                    usize::from(i == best_idx)
                );
            }
        }
    }
    if !all_converged {
        eprintln!("warning: duality gap above tolerance on some lines; report is best-effort");
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    }
}

fn cmd_gradcheck(args: &GradcheckArgs) -> i32 {
    if !args.lambda_raw.is_finite() {
        return usage_fail("--lambda-raw must be finite");
    }
    if args.iters == 0 {
        return usage_fail("--iters must be at least 1");
    }
    if !args.tol.is_finite() || args.tol <= 0.0 {
        return usage_fail("--tol must be a positive number");
    }
    let ShapeArg {
        channels,
        height,
        width,
    } = args.shape;
    if channels * height * width > GRADCHECK_MAX_ELEMENTS {
        return usage_fail(&format!(
            "--shape has {} elements; the finite-difference sweep is capped at {GRADCHECK_MAX_ELEMENTS}",
            channels * height * width
        ));
    }
    let params = match LayerParams::new(
        vec![args.lambda_raw],
        match args.mode {
            ModeArg::Smooth => LayerMode::Smooth,
            ModeArg::Sharpen => LayerMode::Sharpen,
        },
        args.spatial.to_spatial(),
        args.iters,
    ) {
        Ok(p) => p,
        Err(e) => return usage_fail(&format!("bad layer configuration: {e}")),
    };

    let mut rng = SplitMix64::new(args.seed);
    let spec = PiecewiseSpec::default();
    let mut planes = Vec::with_capacity(channels);
    for _ in 0..channels {
        planes.push(gen_plane(&mut rng, height, width, &spec));
    }
    let stack = ChannelStack::from_planes(&planes).expect("planes share a shape");
    let cot: Vec<f64> = (0..stack.values().len())
        .map(|_| rng.next_normal())
        .collect();
    let cot_stack = ChannelStack::new(channels, height, width, cot.clone())
        .expect("cotangent matches the instance shape");

    let (_, saved) = match crate::layer::layer_forward(&stack, &params) {
        Ok(v) => v,
        Err(e) => return io_fail(&format!("forward failed: {e}")),
    };
    let (gx, graw) = match crate::layer::layer_backward(&saved, &cot_stack) {
        Ok(v) => v,
        Err(e) => return io_fail(&format!("backward failed: {e}")),
    };

    // Scalar probe: cotangent dotted with the layer output.
    let probe = |values: &[f64], raw: f64| -> f64 {
        let s = ChannelStack::new(channels, height, width, values.to_vec())
            .expect("probe keeps the shape");
        let p = LayerParams::new(
            vec![raw],
            params.mode(),
            params.spatial(),
            params.dykstra_iters(),
        )
        .expect("probe raw value is finite");
        let (y, _) = crate::layer::layer_forward(&s, &p).expect("probe forward");
        y.values().iter().zip(&cot).map(|(a, b)| a * b).sum()
    };

    let fd_x = finite_diff_grad(|v| probe(v, args.lambda_raw), stack.values(), 1e-6);
    let mut max_rel_x = 0.0f64;
    for (a, f) in gx.values().iter().zip(&fd_x) {
        max_rel_x = max_rel_x.max((a - f).abs() / f.abs().max(1.0));
    }

    let base = stack.values().to_vec();
    let raw_grad: f64 = graw.iter().sum();
    let h = 1e-6;
    let fd_raw =
        (probe(&base, args.lambda_raw + h) - probe(&base, args.lambda_raw - h)) / (2.0 * h);
    let max_rel_raw = (raw_grad - fd_raw).abs() / fd_raw.abs().max(1.0);

    let tol = args.tol;
    let mode_label = match args.mode {
        ModeArg::Smooth => "smooth",
        ModeArg::Sharpen => "sharpen",
    };
    let spatial_label = match args.spatial {
        SpatialArg::TwoD => "2d",
        SpatialArg::Rows => "rows",
        SpatialArg::Cols => "cols",
    };
    println!(
        "shape={channels}x{height}x{width} mode={mode_label} spatial={spatial_label} iters={} lambda_raw={}",
        params.dykstra_iters(),
        args.lambda_raw
    );
    println!("max_rel_err_x={max_rel_x:.3e} tol={tol:.1e}");
    println!("max_rel_err_lambda_raw={max_rel_raw:.3e} tol={tol:.1e}");
    if max_rel_x <= tol && max_rel_raw <= tol {
        println!("PASS");
        EXIT_OK
    } else {
        println!("FAIL");
        EXIT_GRADCHECK_FAILED
    }
}

fn cmd_bench(args: &BenchArgs) -> i32 {
    let cfg = BenchConfig {
        sizes: args.sizes.clone(),
        batch: args.batch,
        reps: args.reps,
        lambda: args.lambda,
        seed: args.seed,
        noise_sigma: BenchConfig::default().noise_sigma,
    };
    let rows = match run_bench(&cfg) {
        Ok(r) => r,
        Err(e) => return usage_fail(&format!("bad bench configuration: {e}")),
    };
    match args.format {
        FormatArg::Csv => print!("{}", bench_csv(&rows)),
        FormatArg::Text => {
            println!(
                "{:<13} {:>7} {:>6} {:>11} {:>10} {:>9}",
                "solver", "n", "batch", "mean_ms", "std_ms", "speedup"
            );
            for r in &rows {
                let speedup = r
                    .speedup
                    .map(|s| format!("{s:.1}x"))
                    .unwrap_or_else(|| "-".to_string());
                println!(
                    "{:<13} {:>7} {:>6} {:>11.4} {:>10.4} {:>9}",
                    r.solver, r.n, r.batch, r.mean_ms, r.std_ms, speedup
                );
            }
        }
    }
    EXIT_OK
}

/// Parses argv and runs the requested subcommand, returning the process
/// exit code. Kept separate from main so integration tests can cover the
/// mapping.
pub fn run() -> i32 {
    configure_threads();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.cmd {
        Command::Smooth(a) => cmd_filter(&a, LayerMode::Smooth),
        Command::Sharpen(a) => cmd_filter(&a, LayerMode::Sharpen),
        Command::DenoiseEval(a) => cmd_denoise_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}
