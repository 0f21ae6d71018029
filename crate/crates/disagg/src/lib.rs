//! Bayesian inference for populations observed only through group sums.
//!
//! Individual values (say, grape bunch weights) are recorded only as bucket
//! totals `y_i` over `n_i` individuals. This crate recovers the population
//! mean and variance, and the latent individual values themselves, with two
//! samplers:
//!
//! * [`conjugate`]: an exact Gibbs sampler for the normal model, where the
//!   bucket averages are sufficient and both conditional posteriors are
//!   closed-form.
//! * [`engine`] + [`latent`]: a Metropolis-within-Gibbs sampler for any
//!   positive-support likelihood (log-normal shipped), which imputes the
//!   individual values with a sum-preserving Dirichlet proposal: weights
//!   w ~ Dirichlet(delta * x) rescaled by the bucket total, so every
//!   proposal satisfies the sum constraint by construction.
//!
//! [`simdata`] generates the synthetic study the method is validated on, and
//! [`diagnostics`] provides ESS, split R-hat, and posterior summaries.

pub mod conjugate;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod latent;
pub mod model;
pub mod simdata;

pub use error::{Error, Result};
