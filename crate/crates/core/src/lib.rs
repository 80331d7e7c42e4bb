//! Models and numerics for a nitrogen-vacancy centre coupled to an open
//! microcavity: Purcell enhancement, photon statistics, charge and spin
//! dynamics, lifetime tuning, resonant excitation and fitting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bloch;
pub mod decay;
pub mod error;
pub mod fit;
pub mod golden;
pub mod multistate;
pub mod qed;
pub mod quad;
pub mod rate3;
pub mod rates;
pub mod rfscan;
pub mod scenario;
pub mod shape;
pub mod stochastic;
pub mod units;

pub use error::{Error, Result};
