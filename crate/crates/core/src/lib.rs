//! Finite-volume solver for multi-class non-local traffic flow with
//! per-class reaction delays.

pub mod cli;
pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod scenarios;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Scenario, ValidatedScenario};
pub use solver::{run, RunOptions, Trajectory};
