//! Simulation, certified constants and closed-form error envelopes for
//! input-driven contracting SDEs `dx = F(x,u)dt + Σ(x,u)dB`, with
//! Ornstein–Uhlenbeck and Jacobi-diffusion input noise, plus Monte Carlo
//! machinery that checks each envelope against simulated ensembles.

// Parameter guards use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod cli;
pub mod contraction;
pub mod error;
pub mod grid;
pub mod integrate;
pub mod metric;
pub mod montecarlo;
pub mod noise;
pub mod rng;
pub mod signal;
pub mod system;
pub mod wasserstein;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use metric::{validate_metric, weighted_norm_sq, Metric};
pub use rng::{PathRng, RngLineage};
pub use signal::{InputBox, InputNorm, InputSignal};
pub use system::{Constants, Dispersion, EquilibriumMap, SystemSpec};
