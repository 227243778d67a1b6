//! Active learning of homogeneous halfspaces under Tsybakov label noise.
//!
//! The learner minimizes a smooth sigmoid surrogate of the 0-1 loss with
//! projected SGD on the unit sphere. Its gradient oracle queries a label only
//! with probability proportional to the surrogate's slope at the sampled
//! point, which keeps the label cost per step of order `sigma`.
//!
//! Module map:
//! - [`vectors`]: unit vectors, angles and halfspace labels.
//! - [`distributions`]: marginals over `x` and their well-behavedness certificates.
//! - [`noise`]: the Tsybakov noise model and the label-counting oracle.
//! - [`loss`]: the surrogate loss, its gradients and Monte-Carlo estimators.
//! - [`active_fo`]: the label-efficient stochastic gradient oracle.
//! - [`psgd`]: projected SGD driven by that oracle.
//! - [`learner`]: schedule, repetitions, selection and sign disambiguation.
//! - [`evaluation`]: simulator-side metrics that cost no labels.
//! - [`cli`]: configuration, orchestration and result files.

pub mod active_fo;
pub mod cli;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod learner;
pub mod loss;
pub mod noise;
pub mod psgd;
pub mod rng;
pub mod vectors;

pub use error::{Error, Result};
