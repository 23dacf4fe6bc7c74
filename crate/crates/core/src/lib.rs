//! Simulation and verification kernels for the long-time behaviour of four
//! families of Markov processes: a penalized bandit PDMP, SDEs driven by
//! fractional Brownian motion, mean-field noisy rotators and McKean-Vlasov
//! particles with traveling-wave limits.
//!
//! Everything is deterministic given a master seed; see [`rng`].

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod bandit;
pub mod fbm;
pub mod kuramoto;
pub mod waves;

pub use error::{Error, Result};
pub use metrics::{EmpiricalMeasure, GridCdf, RateFit};
pub use rng::{derive_stream, run_replicas, Stream};
