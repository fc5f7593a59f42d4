//! Batched total-variation proximal operators with exact gradients.
//!
//! The core primitive solves, for a 1D signal `x` and strength `lambda`,
//!
//! ```text
//! prox(x, lambda) = argmin_y  0.5 * ||y - x||^2 + lambda * sum_i |y[i+1] - y[i]|
//! ```
//!
//! via either a projected-Newton method on the dual (which certifies its
//! answer with a duality gap) or a direct taut-string pass. On top of that
//! sit a 2D operator built from alternating row/column passes with Dykstra
//! correction terms, exact vector-Jacobian products for both the input and
//! the strength parameter, and a differentiable smoothing/sharpening layer
//! with a softplus parameterization that keeps strengths positive during
//! gradient training.
//!
//! Module map:
//!
//! - [`prox1d`]: 1D solvers, duality-gap certificates, batched driver.
//! - [`tridiag`]: the SPD tridiagonal systems behind the Newton steps.
//! - [`grad1d`]: segment detection and 1D vector-Jacobian products.
//! - [`prox2d`]: the 2D operator, its tape, and its reverse pass.
//! - [`layer`]: smoothing/sharpening layer with forward and backward.
//! - [`imgio`]: minimal PGM/PPM reading and writing plus PSNR.
//! - [`bench`]: the timing harness behind the `bench` subcommand.
//! - [`testkit`]: seeded generators and slow reference solvers; exposed so
//!   downstream crates can reuse the oracles in their own tests.
//! - [`cli`]: the `tvprox` command line entry point.

pub mod bench;
pub mod cli;
pub mod error;
pub mod grad1d;
pub mod imgio;
pub mod layer;
pub mod prox1d;
pub mod prox2d;
pub mod testkit;
pub mod tridiag;
pub mod types;

pub use error::{PassAxis, TvError};
pub use grad1d::{partition, vjp_lambda, vjp_x, SegmentPartition, DEFAULT_SEG_TOL};
pub use imgio::{psnr, read_pnm, write_pnm, PnmError, RasterImage};
pub use layer::{layer_backward, layer_forward, softplus, softplus_inv, LayerSaved};
pub use prox1d::{
    duality_gap, prox_tv1d_batch, prox_tv1d_batch_with, prox_tv1d_newton, prox_tv1d_tautstring,
    NewtonOptions, Prox1dSolve, SolveStats, Solver1d,
};
pub use prox2d::{
    objective_2d, prox_tv2d_dykstra, prox_tv2d_vjp, DykstraOptions, DykstraTape,
    DEFAULT_DYKSTRA_ITERS,
};
pub use types::{
    ChannelStack, DualVector, ImagePlane, LayerMode, LayerParams, Signal, SpatialMode,
};
