//! Numerical laboratory for ODE-type blow-up of the focusing semilinear wave
//! equation `u_tt - Δu = |u|^{p-1} u`.
//!
//! The pipeline builds a refined approximate solution that blows up exactly on
//! a prescribed compact set, integrates the truncated equation from that data
//! at a ladder of start times, and turns the trajectories into verdicts on
//! blow-up rates and on where the solution blows up.

pub mod ansatz;
pub mod artifacts;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod interp;
pub mod manifest;
pub mod math;
pub mod pipeline;
pub mod plot;
pub mod profile;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
