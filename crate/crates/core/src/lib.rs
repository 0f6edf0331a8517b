//! Exponential realized GARCH-Itô (ERGI) volatility modelling.
//!
//! * [`model_core`]: parameter types, ϱ-coefficients, structural to GARCH
//!   mapping, the `Ĥ` recursion and the quasi-likelihood.
//! * [`simulator`]: Euler simulation of the jump-diffusion with noisy
//!   observations, and the Monte-Carlo oracle for `log E[exp(D)]`.
//! * [`realized_vol`]: jump-robust pre-averaging realized volatility.
//! * [`estimation`]: QMLE with `Â`, `V̂` and Z-statistics.
//! * [`forecast_eval`]: one-step forecasts, benchmarks, rolling backtests
//!   and forecast comparison statistics.

pub mod error;
pub mod estimation;
pub mod forecast_eval;
pub mod model_core;
pub mod optimizer;
pub mod realized_vol;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod study;

pub use error::{Error, Result};
