//! Command-line driver for `cdep-core`: CSV input, run configuration, JSON
//! reports and CSV tables, parallel bootstrap and the Monte Carlo harness.

pub mod config;
mod error;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod simulate;

pub use error::AppError;
