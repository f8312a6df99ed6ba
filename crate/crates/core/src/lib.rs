//! Numerical laboratory for a deterministic hidden-variable model of
//! singlet spin correlations.
//!
//! The crate samples hidden states and measurement settings, tabulates
//! joint distributions over `(A, B, C, X, Y, Z)` and checks them against a
//! family of probabilistic constraints (freedom, no-signalling, parameter
//! and outcome independence, factorization and related conditions).

pub mod analysis;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod models;
pub mod sampling;
pub mod tables;

pub use error::{Error, Result};
pub use geometry::{AngleRad, UnitVector};
pub use models::{Model, Outcome, TieBreak};
pub use tables::{ConstraintId, ConstraintReport, JointTable};
