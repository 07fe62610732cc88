//! Disclosure-risk estimation for categorical microdata.
//!
//! The crate covers the full pipeline: cross-classifying microdata into a
//! contingency table, fitting Poisson log-linear models by maximum
//! likelihood, searching a path of two-way interaction models with a
//! penalized likelihood, sampling the posterior of log-linear models with
//! Dirichlet-process random effects, turning posterior rates into
//! re-identification risk estimates, and ranking candidate models by their
//! predictive density on sample-unique cells.
//!
//! Cells are always addressed in row-major order over the declared variable
//! order, and every per-cell vector in the crate follows that order.

pub mod dpmcmc;
pub mod error;
pub mod loglinear;
pub mod math;
pub mod oracle;
pub mod risk;
pub mod selection;
pub mod table;

pub use error::{Error, Result};
