//! Correcting aggregate statistics computed from classifier output for the
//! classifier's misclassification errors.
//!
//! A classifier assigns each unit of a population to one of `K` classes and a
//! per-class total of some quantity `y` is computed from the predictions. The
//! crate estimates the true per-class totals from a labeled test set, either
//! by plugging in the empirical error rates ([`estimators::baseline_estimate`])
//! or by sampling the posterior distribution of the error rates
//! ([`estimators::bayes_estimate`]), optionally restricted to error rates that
//! are consistent with the observed predicted counts.
//!
//! ```
//! use aggcorrect::model::{AggregateVector, ContingencyMatrix};
//! use aggcorrect::estimators::baseline_estimate;
//!
//! let p = ContingencyMatrix::binary(0.2, 0.4)?;
//! let u_hat = AggregateVector::new(vec![10.0, 90.0])?;
//! let corrected = baseline_estimate(&p, &u_hat)?;
//! assert!((corrected.as_slice()[0] + 75.0).abs() < 1e-9);
//! # Ok::<(), aggcorrect::Error>(())
//! ```

pub mod cli;
pub mod constraints;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod io;
pub mod model;
pub mod sampling;
pub mod simulation;

pub use error::{Error, ErrorFamily, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/baseline.md")]
    mod baseline {}
    #[doc = include_str!("../../../book/src/bayesian.md")]
    mod bayesian {}
    #[doc = include_str!("../../../book/src/constraints.md")]
    mod constraints {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
