//! Information-theoretic smart-meter privacy laboratory.
//!
//! A household load `X` is served by the grid (`Y`, what the meter reports),
//! an energy harvester (`Z`) and a rechargeable battery. A stochastic energy
//! management policy chooses the grid draw and the next battery level; this
//! crate samples such systems, estimates the information leakage rate between
//! `Xⁿ` and `Yⁿ` with a scaled forward trellis recursion, computes the wasted
//! energy rate and searches policy grids for Pareto-optimal trade-offs.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod model;
pub mod search;
pub mod simulate;
pub mod trellis;

pub use error::{Error, Result};
