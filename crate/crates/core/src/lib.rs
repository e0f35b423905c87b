//! Hessian-informed mirror descent for linearly constrained convex problems,
//! and minimizing-movement solvers for Wasserstein gradient flows and the
//! degenerate-mobility Cahn-Hilliard equation built on top of it.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command line live in the companion `mdflow` crate.

#![no_std]
// `!(x > 0.0)` is how NaN parameters are rejected alongside nonpositive ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bregman;
pub mod cahn_hilliard;
mod dual_newton;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod math;
pub mod objective;
pub mod solvers;
pub mod wasserstein;

pub use bregman::{
    bregman_divergence, solve_multiplier, strong_convexity_ratio, BregmanValue, DeclaredNorm,
    MirrorMap, MultiplierStep,
};
pub use error::{Error, Result};
pub use grid::{integrate, Field, Grid1D, WeightedLaplacian};
pub use objective::{ConstrainedProblem, FnObjective, Objective};
