//! Desk-scale simulator of blockchain-based quantum federated learning (BQFL).
//!
//! Variational quantum circuit classifiers are trained federatedly across
//! simulated worker devices, aggregated by FedAvg or kept as an ensemble for
//! federated inference, and recorded on a simulated proof-of-stake
//! hash-chained ledger. A classical MLP baseline runs through the same
//! federated pipeline for comparison, and closed-form calculators expose the
//! convergence/delay bounds of the underlying model.
//!
//! Everything is deterministic: a single run seed derives all substreams, so
//! two runs with the same config produce byte-identical metrics and ledger
//! files.

pub mod analytics;
pub mod chain;
pub mod classical;
pub mod config;
pub mod data;
pub mod error;
pub mod fed;
pub mod qsim;
pub mod rng;
pub mod runner;
pub mod vqc;

#[cfg(test)]
pub(crate) mod matrix_oracle;

pub use error::{Error, Result};
