//! Time-varying Bayesian autoregressive Poisson count models.
//!
//! The trend `mu(t/T)` and lag coefficients `a_i(t/T)` of a Poisson
//! autoregression are B-spline expansions whose priors keep `mu > 0` and
//! `sum_i a_i < 1`. Posterior draws come from an adaptive blockwise
//! Metropolis sampler and are summarized as pointwise credible bands.
//! Classical baselines (single mean-shift changepoint, sample ACF), daily
//! count ingestion and a forward simulator round out the pipeline.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classical;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod exec;
pub mod model;
pub mod posterior;
pub mod sampler;
pub mod series;
pub mod spline;
pub mod synthgen;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{LogPosterior, ModelSpec, ParameterState};
pub use series::CountSeries;
pub use spline::BasisSpec;
