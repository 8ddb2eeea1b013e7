//! Clustering-based global minimum variance portfolios.
//!
//! Stocks are clustered on their daily return vectors, a minimum variance
//! portfolio is solved inside every cluster and again across the cluster
//! portfolios, and the result is backtested on a rolling
//! estimate-then-hold schedule.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod gmvp;
pub mod market_data;
pub mod metrics;
pub mod preprocess;
pub mod synthetic;
pub mod two_stage;

pub use error::{Error, Result};
