//! Regularized exponential-family matrix completion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod expfam;
pub mod harness;
pub mod linalg;
pub mod regularizers;
pub mod sampling;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use expfam::Family;
pub use linalg::Mat;
pub use regularizers::Regularizer;
pub use sampling::ObservationSet;
