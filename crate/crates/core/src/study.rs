//! Monte-Carlo study: simulate, estimate RV, fit, test and forecast, one
//! replication at a time.
//!
//! Every replication's seed depends only on the run seed and the
//! replication index, so cells that differ in `n` or `m` share their
//! random numbers and the shorter paths are prefixes of the longer ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_qmle, z_statistics, OptimizerConfig};
use crate::forecast_eval::{fit_realized_garch_linear, forecast_ergi, ModelTag};
use crate::model_core::{floor_rv, h_intercept, GarchParams, StructuralParams};
use crate::realized_vol::{prv_with, relative_error, PrvOptions, C_TAU_SIMULATION};
use crate::rng::{SeedTree, StreamKind};
use crate::simulator::{simulate_observations, SimConfig};

/// Models compared on the one-day-ahead GARCH volatility.
pub const FORECAST_MODELS: [ModelTag; 3] = [ModelTag::Ergi, ModelTag::RealGarch, ModelTag::PrevRv];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub replications: usize,
    pub n_values: Vec<usize>,
    pub m_values: Vec<usize>,
    /// One-step forecasts scored after the estimation sample, with the
    /// parameters held at their estimates. The first one is the
    /// `n + 1` forecast.
    pub forecast_days: usize,
    pub c_tau_multiplier: f64,
    /// Fit on the simulated integrated variance instead of RV, which
    /// isolates the estimator from RV measurement error.
    pub oracle_iv: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            replications: 100,
            n_values: vec![100, 200, 500],
            m_values: vec![390, 1170],
            forecast_days: 20,
            c_tau_multiplier: C_TAU_SIMULATION,
            oracle_iv: false,
        }
    }
}

impl StudyConfig {
    pub fn paper_scale() -> Self {
        Self { replications: 500, m_values: vec![390, 1170, 11_700], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be positive".into()));
        }
        if self.n_values.is_empty() || self.m_values.is_empty() {
            return Err(Error::InvalidInput("n_values and m_values must be non-empty".into()));
        }
        if self.forecast_days == 0 {
            return Err(Error::InvalidInput("forecast_days must be positive".into()));
        }
        if !(self.c_tau_multiplier > 0.0) {
            return Err(Error::InvalidInput("c_tau_multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.n_values.iter().flat_map(|&n| self.m_values.iter().map(move |&m| (n, m))).collect()
    }
}

/// Ground truth shared by all replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub theta: StructuralParams,
    pub theta_g: GarchParams,
    pub log_mgf: f64,
}

impl Truth {
    pub fn new(theta: StructuralParams, log_mgf: f64) -> Result<Self> {
        let theta_g = crate::model_core::structural_to_garch(&theta, log_mgf)?;
        Ok(Self { theta, theta_g, log_mgf })
    }

    /// `H_{t}(θ₀)` from the close-of-previous-day state `b_{t−1}`.
    pub fn conditional_log_variance(&self, b_prev: f64) -> f64 {
        h_intercept(&self.theta) + self.theta.rho().rho * b_prev + self.log_mgf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub n_days: usize,
    pub obs_per_day: usize,
    pub theta_hat: [f64; 3],
    pub std_errors: [f64; 3],
    pub z: [f64; 3],
    pub converged: bool,
    pub singular_v: bool,
    pub rv_error: f64,
    /// Squared error of the day `n + 1` forecast, per [`FORECAST_MODELS`].
    pub next_day_sq_error: [f64; 3],
    /// Mean squared error over the `forecast_days` forecasts.
    pub horizon_mse: [f64; 3],
}

pub fn replication_seed(seed: u64, replication: usize) -> u64 {
    SeedTree::new(seed).child(StreamKind::Replication, replication as u64).seed()
}

pub fn run_replication(
    truth: &Truth,
    base: &SimConfig,
    optimizer: &OptimizerConfig,
    study: &StudyConfig,
    (n, m): (usize, usize),
    replication: usize,
    seed: u64,
) -> Result<ReplicationOutcome> {
    let sim = SimConfig {
        n_days: n + study.forecast_days,
        obs_per_day: m,
        seed: replication_seed(seed, replication),
        ..*base
    };
    let data = simulate_observations(&truth.theta, &sim)?;
    let opts = PrvOptions { c_tau_multiplier: study.c_tau_multiplier, ..PrvOptions::default() };
    let raw: Vec<f64> = data
        .ticks
        .iter()
        .map(|d| prv_with(d, opts).map(|e| e.value))
        .collect::<Result<_>>()?;
    let iv = data.true_iv();
    let rv = if study.oracle_iv { iv.clone() } else { floor_rv(&raw).values };
    let rv_error = relative_error(&rv[..n], &iv[..n])?;

    let fit = fit_qmle(&rv[..n], optimizer)?;
    let z = z_statistics(&fit, &truth.theta_g).map(|s| s.z);
    let rgarch = fit_realized_garch_linear(&rv[..n])?;

    let mut sq = vec![[0.0; 3]; study.forecast_days];
    for (k, row) in sq.iter_mut().enumerate() {
        let t = n + k;
        let target = truth.conditional_log_variance(data.days[t].b_start).exp();
        let forecasts = [forecast_ergi(&fit, &rv[..t])?, rgarch.forecast_on(&rv[..t], rv[0]), rv[t - 1]];
        for (r, f) in row.iter_mut().zip(forecasts) {
            *r = (f - target).powi(2);
        }
    }
    let horizon_mse = std::array::from_fn(|j| sq.iter().map(|r| r[j]).sum::<f64>() / sq.len() as f64);
    Ok(ReplicationOutcome {
        replication,
        n_days: n,
        obs_per_day: m,
        theta_hat: fit.theta_hat.to_array(),
        std_errors: fit.std_errors,
        z,
        converged: fit.converged,
        singular_v: fit.singular_v,
        rv_error,
        next_day_sq_error: sq[0],
        horizon_mse,
    })
}

/// All replications of one `(n, m)` cell. Failed replications are
/// returned separately with their error.
pub fn run_cell(
    truth: &Truth,
    base: &SimConfig,
    optimizer: &OptimizerConfig,
    study: &StudyConfig,
    cell: (usize, usize),
    seed: u64,
) -> (Vec<ReplicationOutcome>, Vec<(usize, Error)>) {
    let results: Vec<(usize, Result<ReplicationOutcome>)> = (0..study.replications)
        .into_par_iter()
        .map(|r| (r, run_replication(truth, base, optimizer, study, cell, r, seed)))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (r, res) in results {
        match res {
            Ok(o) => ok.push(o),
            Err(e) => {
                log::warn!("cell {cell:?} replication {r} failed: {e}");
                failed.push((r, e));
            }
        }
    }
    (ok, failed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n_days: usize,
    pub obs_per_day: usize,
    pub replications: usize,
    pub failures: usize,
    /// Per-parameter MSE of `θ̂` around the true GARCH parameters.
    pub mse: [f64; 3],
    pub mean_rv_error: f64,
    /// MSE of the day `n + 1` forecasts across replications.
    pub forecast_mse: [f64; 3],
    /// Fraction of replications where ERGI has the smallest horizon MSE.
    pub ergi_best_fraction: f64,
}

pub fn summarize(
    cell: (usize, usize),
    outcomes: &[ReplicationOutcome],
    failures: usize,
    truth: &Truth,
) -> Result<CellSummary> {
    if outcomes.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let k = outcomes.len() as f64;
    let t0 = truth.theta_g.to_array();
    let mse = std::array::from_fn(|j| outcomes.iter().map(|o| (o.theta_hat[j] - t0[j]).powi(2)).sum::<f64>() / k);
    let forecast_mse = std::array::from_fn(|j| outcomes.iter().map(|o| o.next_day_sq_error[j]).sum::<f64>() / k);
    let wins = outcomes
        .iter()
        .filter(|o| o.horizon_mse[0] < o.horizon_mse[1] && o.horizon_mse[0] < o.horizon_mse[2])
        .count();
    Ok(CellSummary {
        n_days: cell.0,
        obs_per_day: cell.1,
        replications: outcomes.len(),
        failures,
        mse,
        mean_rv_error: outcomes.iter().map(|o| o.rv_error).sum::<f64>() / k,
        forecast_mse,
        ergi_best_fraction: wins as f64 / k,
    })
}

/// Z-statistics usable for a normality check: finite and from a fit with
/// an invertible `V̂`.
pub fn usable_z(outcomes: &[ReplicationOutcome], param: usize) -> Vec<f64> {
    outcomes
        .iter()
        .filter(|o| !o.singular_v && o.z[param].is_finite())
        .map(|o| o.z[param])
        .collect()
}
