//! Informed Thompson sampling for linear Gaussian bandits with offline expert
//! demonstrations.
//!
//! The crate is `no_std` (with `alloc`): environments, expert policies,
//! conjugate and grid posteriors, the Bayesian-bootstrap solver, competence
//! estimators, regret-bound formulas and single-episode simulation. File
//! formats, parallel experiment execution and the CLI live in the
//! `demobandit` crate.
#![no_std]

extern crate alloc;

pub mod agents;
pub mod bandit;
pub mod bootstrap;
pub mod bounds;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod expert;
pub mod posterior;
pub mod rng;

pub use error::{Error, Result};
