//! Numerics for single-shot energy exchange in open quantum systems.
//!
//! The crate propagates a joint system-environment wave function on a
//! periodic 2D grid, integrates Bohmian configuration trajectories,
//! extracts conditional wave functions along environment trajectories, and
//! decomposes the conditional-energy flow into external, interaction, and
//! entanglement contributions. Closed-form oracles for the analytically
//! solvable setups validate every stage, and a configuration-driven
//! experiment runner ties the stages into reproducible runs.

pub mod conditional;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod fft;
pub mod grid;
pub mod hamiltonian;
pub mod oracles;
pub mod output;
pub mod propagator;
pub mod snapshot_io;
pub mod state;
pub mod trajectories;

pub use error::{Error, Result};
pub use grid::Grid;
pub use state::JointWaveFunction;
