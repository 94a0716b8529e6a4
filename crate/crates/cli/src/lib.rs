//! Config-driven pipeline: generate instances, run solvers, bootstrap
//! profiles, derive strategies and assemble the report.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::Options;
