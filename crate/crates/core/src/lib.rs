//! Numerical laboratory for singularly perturbed Hamilton-Jacobi-Bellman
//! equations whose fast variable follows an Ornstein-Uhlenbeck-type diffusion.
//!
//! The pipeline: [`cell`] solves the ergodic cell problem by vanishing
//! discount, [`ergodic_mc`] cross-checks the ergodic constant by simulation,
//! [`effective`] solves the averaged (and coefficient-shaken) slow problem,
//! [`twoscale`] solves the full two-scale equation, and [`harness`] measures
//! the gap between the two as the scale separation grows.

pub mod cell;
pub mod cli;
pub mod effective;
pub mod ergodic_mc;
pub mod error;
pub mod grid;
pub mod harness;
pub mod problem;
pub mod sparse;
pub mod twoscale;

pub use error::{Error, Result};
