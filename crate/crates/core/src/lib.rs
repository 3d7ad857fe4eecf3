//! Simulation and verification toolkit for log-infinitely divisible
//! multifractal random measures.
//!
//! The crate is organised bottom-up:
//!
//! * [`levy`]: Laplace exponents `ψ`, structure function `ζ`, normalization,
//!   critical moment and non-degeneracy.
//! * [`cone`]: cone sets `A_l(t)` and their θ-masses and overlaps.
//! * [`synthesis`]: samplers for the log-field `ω_l` on uniform grids.
//! * [`measure`]: the measure `M_l`, the random metric `ρ`, and moment
//!   scaling estimators.
//! * [`dimension`]: fractal sets, box counting, and the 1D KPZ pipeline.
//! * [`chaos2d`]: 2D log-normal chaos, the disk Green function, and the 2D
//!   KPZ pipeline.
//! * [`config`], [`cli`]: the `mrm` experiment runner.

// `!(x < y)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaos2d;
pub mod cli;
pub mod cone;
pub mod config;
pub mod dimension;
pub mod error;
pub mod io;
pub mod levy;
pub mod linalg;
pub mod measure;
pub mod parallel;
pub mod quad;
pub mod seed;
pub mod stats;
pub mod synthesis;

pub use error::{MrmError, Result};
