//! Benchmarking toolkit for parameterized stochastic Ising solvers.
//!
//! The crate is organized along the benchmarking pipeline:
//!
//! * [`model`]: Ising instances, spin configurations and sample sets.
//! * [`instances`]: Wishart planted-ensemble generation and instance files.
//! * [`pt`]: parallel tempering with probability-parameterized temperature bounds.
//! * [`cim`]: chaotic-amplitude-control coherent Ising machine simulator.
//! * [`profiles`]: bootstrap performance profiles over a resource grid.
//! * [`strategies`]: virtual best, fixed and exploration-exploitation
//!   parameter-setting strategies, smoothing and cross-validation.

// `!(x > 0.0)` is used on purpose so NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cim;
pub mod error;
pub mod instances;
pub mod model;
pub mod params;
pub mod profiles;
pub mod pt;
pub mod rng;
pub mod solver;
pub mod strategies;

pub use error::{Error, Result};
pub use model::{IsingInstance, SampleRecord, SampleSet, SpinConfig};
pub use params::{Distribution, ParameterPoint, SearchSpace};
pub use profiles::{PerformanceProfile, ProfilePoint, ResourceGrid};
pub use solver::SolverId;
pub use strategies::{MetaParams, StrategyCurve, StrategyKind};
