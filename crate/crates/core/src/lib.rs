//! Mixture-of-Gaussian-process identification of a one-joint actuator's
//! inverse dynamics, and passive feedforward compensation built from the
//! nominal mode.
//!
//! Start with [`sim::run_exploration`] for data, [`mixture::identify`] for
//! the mode mixture, and [`compensation::CompensationPolicy`] for the
//! controller. [`cli`] wires the same steps into the `gpmix` binary.

pub mod cli;
pub mod compensation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gp;
pub mod io;
pub mod mixture;
pub mod sim;

pub use error::{Error, Result};
