//! One-shot federated conformal calibration.
//!
//! Each of `m` agents holds `n` nonconformity scores and sends a single value
//! to a server. The server combines them into a threshold `q` such that the
//! set `{y : s(x, y) <= q}` covers a fresh point with probability at least
//! `1 - alpha`.
//!
//! - [`order_stats`]: order statistics and the quantile-of-quantiles estimator.
//! - [`coverage_table`]: exact coverage `M_{l,k}` and the `(l*, k*)` search.
//! - [`conformal`]: score functions, calibrators, prediction intervals.
//! - [`privacy`]: locally private quantiles and the private calibrator.
//! - [`federation`]: one-shot protocol simulation and experiments.

pub mod conformal;
pub mod config;
pub mod coverage_table;
pub mod error;
pub mod federation;
pub mod order_stats;
pub mod poly;
pub mod privacy;
pub mod rng;
pub mod special;

pub use error::{FedcalError, Result};
