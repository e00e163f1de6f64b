//! Lowest-order Kraus perturbation theory for a discrete quantum system
//! damped by a bosonic reservoir, with closed-form reference channels and the
//! damped resonant Jaynes-Cummings application.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod jaynes_cummings;
pub mod kraus;
pub mod laplace;
pub mod matrix;
pub mod quad;
pub mod reservoir;
pub mod scenario;
pub mod special;

pub use error::{Error, Result};
pub use matrix::{CMatrix, C64};
