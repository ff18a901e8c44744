//! Uncertainty-aware individual treatment effect estimation.
//!
//! - [`sim`]: randomized-trial cohorts with known potential outcomes
//! - [`net`]: multi-head Gaussian regressor trained by factual NLL
//! - [`ite`]: ITE distributions, probability queries, count and cost expectations
//! - [`eval`]: factual error, rejection curves, ITE-error bounds, k-fold harness
//! - [`policy`]: recommendation policies scored by ERUPT
//! - [`enrichment`]: z-score power proxy and uncertainty-based enrichment
//! - [`pipeline`]: config-driven simulate/train/evaluate runs with a manifest

pub mod enrichment;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod ite;
pub mod net;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
