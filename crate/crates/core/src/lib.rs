//! Simulation and analysis of piecewise-smooth (Filippov) vector fields on
//! the unit sphere: switching-circle classification, sliding dynamics,
//! event-driven orbit integration, and a finite transitivity probe.

pub mod analysis;
pub mod classify;
pub mod cli;
pub mod error;
pub mod orbit;
pub mod psvf;
pub mod sphere;

pub use error::{Error, Result};
