//! Index-tracking engine: exact transaction-cost rebalancing via Banach
//! fixed-point iteration, return- and value-based tracking objectives with
//! cash-flow controls, a PPO trainer with episode resampling and terminal
//! value bootstrapping, and a walk-forward backtest harness.

pub mod backtest;
pub mod cost;
pub mod error;
pub mod market;
pub mod metrics;
pub mod rebalance;
pub mod rl;

pub use error::{Result, TrackerError};
