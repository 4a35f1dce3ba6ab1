//! Treed distributed lag models.
//!
//! Bayesian ensembles of regression trees over the lag axis estimate how an
//! exposure measured at many preceding time points affects an outcome. The
//! crate covers single exposures, mixtures with lagged interactions, and
//! effect heterogeneity through modifier trees, for Gaussian and binary
//! outcomes.
//!
//! The usual flow is [`data`] → [`mcmc::fit`] → [`inference::summarize`],
//! with [`archive`] for persistence and [`diagnostics`] for convergence checks.

pub mod archive;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod mcmc;
pub mod stats;
pub mod tree;

pub use error::{Error, ErrorCategory, Result};
