//! Doubly robust estimation of shift-intervention effects under spatial
//! confounding, plus the simulation scenarios and harness used to evaluate
//! the estimators.

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod inference;
pub mod learners;
pub mod spatial;

pub use error::{Error, Result};
