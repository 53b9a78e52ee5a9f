//! Simulation core for self-consuming generative training loops.
//!
//! A generator (kernel density estimator or a toy score-based diffusion
//! model) is retrained generation after generation on a mixture of real data
//! and samples drawn from earlier generations. This crate holds everything
//! needed to run such loops and to check them against closed-form bounds:
//!
//! - [`distributions`]: ground-truth Gaussian targets with exact pdfs and samplers.
//! - [`kernel_density`]: class-`s` kernels, the `n^(-1/(2s+2d))` bandwidth rule, KDE fit/eval/sample.
//! - [`mixing`]: per-generation mixture schedules and categorical mixture sampling.
//! - [`bounds`]: coefficient recursion, TV upper bounds, sample schedules, phase transition.
//! - [`divergences`]: quadrature and histogram TV, quadrature KL.
//! - [`diffusion`]: OU forward process, random-feature score network, DSM training, reverse sampling.
//! - [`loop_engine`]: the generation loop itself and replicate summaries.
//!
//! The crate is `no_std` and only needs `alloc`; file IO and the command-line
//! front end live in the `sclab` crate.
#![no_std]
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod diffusion;
pub mod distributions;
pub mod divergences;
mod error;
pub mod kernel_density;
pub mod loop_engine;
pub mod mixing;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod stats;

pub use error::{Error, Result};

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
