//! Impulse and stochastic control of jump-diffusions through the
//! Hamilton-Jacobi-Bellman quasi-variational inequality.

// `!(x > 0.0)` guards reject NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod generator;
pub mod grid;
pub mod impulse;
pub mod io;
pub mod levy;
pub mod linalg;
pub mod mc;
pub mod problem;
pub mod solver;
pub mod supersolution;
pub mod validate;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid, Stencil, ValueField};
pub use levy::LevyModel;
pub use problem::{Domain, Horizon, Impulses, Problem};
pub use solver::{solve_elliptic, solve_parabolic, NodeAction, Policy, Region, SolverOptions};
