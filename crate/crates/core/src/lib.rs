//! Rater severity, discrimination and capability estimation for
//! dichotomous ratings.
//!
//! The crate covers four rater-effects families (three-facet, generalized
//! multi-facet, probit threshold and hierarchical rater models), a
//! normalized capability index for each, an h-likelihood estimator with a
//! Laplace-approximated marginal likelihood, quadrature oracles, and the
//! parameter-recovery simulations used to validate all of it.

pub mod capability;
mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod quadrature;
pub mod simulation;

pub use error::{Error, Result};
