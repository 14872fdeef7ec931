//! Quantum trajectories and stochastic thermodynamics of open quantum systems.
//!
//! Units are `ħ = k_B = 1`. Qubits use the basis `(|e>, |g>)`, so that
//! `σz = diag(1, -1)` and `σ- = |g><e|`.

pub mod error;
pub mod linalg;

pub use error::{Error, Result};
pub mod channels;
pub mod scenarios;
pub mod stats;
pub mod thermo;
pub mod trajectories;
pub mod unravel;
