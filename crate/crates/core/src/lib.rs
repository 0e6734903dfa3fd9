//! Desk-scale grokking laboratory.
//!
//! Trains small networks on modular-arithmetic tables, predicts delayed
//! generalization from the spectral signature of the early training loss, and
//! measures the loss landscape along the training trajectory.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod curvature;
pub mod data;
pub mod error;
pub mod harness;
pub mod intrinsic_dim;
pub mod landscape;
pub mod model;
pub mod objective;
pub mod optim;
pub mod spectral;
pub mod tensor;
pub mod testfn;

pub use error::{Error, Result};
