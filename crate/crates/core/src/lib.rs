//! Optimal consumption and investment with a liquid risky asset and an
//! illiquid asset that trades under proportional costs.
//!
//! The problem reduces to a free boundary problem for a first-order ODE.
//! [`fbp_solver`] finds the no-trade boundaries, [`policy`] maps them back to
//! the value function and controls, [`simulate`] checks the policy by Monte
//! Carlo and [`verify`] runs the consistency suites.

pub mod error;
pub mod fbp_solver;
pub mod model;
pub mod ode_field;
pub mod policy;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
