//! Deep hedging experiments under Heston dynamics.
//!
//! The crate simulates correlated price/variance paths, trains an LSTM
//! hedging policy with exact backpropagation through time, and compares a
//! plain Adam baseline against a hybrid optimizer that preconditions the
//! output layer with Kronecker-factored curvature (K-FAC).
//!
//! Module map:
//!
//! * [`market_sim`] – Heston path generation, normalization, splitting, CSV I/O
//! * [`policy`] – LSTM policy, initialization, forward pass and BPTT
//! * [`objective`] – hedged P&L, transaction costs, composite loss and gradient
//! * [`optim`] – Adam, K-FAC factors/preconditioning, the hybrid step
//! * [`train`] – mini-batch training loop, convergence epochs, model documents
//! * [`eval_stats`] – validation metrics, Welch t-tests, comparison reports
//! * [`config`] / [`pipeline`] – run configuration and the end-to-end pipeline

pub mod config;
pub mod error;
pub mod eval_stats;
pub mod market_sim;
pub mod numeric;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
