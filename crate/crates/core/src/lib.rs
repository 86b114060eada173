//! Reactive quadrotor navigation around LiDAR-detected obstacles.
//!
//! A nonlinear MPC embeds circle and rectangle obstacle constraints through a
//! quadratic penalty and solves each stage with PANOC. Potential-field
//! baselines shift the set-point of an obstacle-free tracking MPC instead.
//! [`harness`] ties perception, control and a simulated plant into a 20 Hz
//! closed loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apf;
pub mod constraints;
pub mod error;
pub mod harness;
pub mod model;
pub mod perception;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
