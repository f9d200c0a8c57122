//! Simulation and identification of laminate hinged mechanisms.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod hinge_models;
pub mod identification;
pub mod kinematics;
pub mod mechanism;
pub mod output;

mod lstsq;

pub use error::{Error, Result};
