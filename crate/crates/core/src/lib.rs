//! Constraint energy minimizing multiscale finite elements for linear
//! elasticity in high-contrast media.

pub mod auxiliary;
pub mod cem_offline;
pub mod coarse;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod grid;
pub mod media;
pub mod online;
pub mod problem;
pub mod sparse;

pub use error::{CemError, Result};
