//! Simulation of a reconfigurable QKD link: time-bin BB84 with decoys, DPS
//! and COW over a shared pulse model, a loss/interference/detection chain,
//! sifting and decoy estimation, and asymptotic secret key rates.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod keyrate;
pub mod optics;
pub mod orchestrator;
pub mod pulse;
pub mod report;
pub mod units;
pub mod validation;

pub use error::{Error, Result};
