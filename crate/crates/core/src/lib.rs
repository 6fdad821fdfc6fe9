//! Simulation and verification toolkit for U-statistics of supercritical
//! branching Ornstein-Uhlenbeck particle systems.

pub mod error;
pub mod harness;
pub mod kernels;
pub mod limits;
pub mod model;
pub mod numeric;
pub mod ou_kernel;
pub mod partitions;
pub mod simulator;
pub mod tree_oracle;
pub mod ustats;

pub use error::{Error, Result};
pub use model::{DerivedConstants, ModelParams, Regime, RegimeKind};
