//! Friction-inverse feedforward for a piezo-driven stage: plant model,
//! parameter identification, data collection, Levenberg–Marquardt network
//! training, dominance analysis and closed-loop tracking.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod control;
pub mod dataset;
pub mod dominance;
pub mod error;
pub mod nn;
pub mod plant;
pub mod rng;
pub mod signal;
pub mod sysid;
pub mod trajectory;

pub use error::{Error, Result};
pub use plant::{FrictionParams, PlantConfig};
pub use signal::SignalSpec;
pub use trajectory::Trajectory;
