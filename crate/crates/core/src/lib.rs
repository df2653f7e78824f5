//! Portfolio credit risk under climate scenarios.
//!
//! Borrowers follow a multi-factor Merton model: rating migrations are driven
//! by correlated Gaussian systematic factors (economic, transition and
//! physical risk) whose loadings evolve along a scenario. Losses are computed
//! in the granular limit, so a portfolio's loss given a factor trajectory is a
//! closed-form function of that trajectory and Monte Carlo is only needed over
//! the systematic factors.

pub mod allocation;
pub mod engine;
pub mod error;
pub mod factors;
pub mod io;
pub mod migration;
pub mod normal;
pub mod pipeline;
pub mod portfolio;
pub mod recovery;

pub use error::{Error, ErrorClass, Result};
