//! File formats, parallel experiment execution and the `demobandit` CLI on
//! top of [`demobandit_core`].

pub mod cli;
pub mod dataset;
pub mod error;
pub mod runner;

pub use error::{AppError, Result};
