//! One-day-ahead volatility forecasts, benchmark models, rolling-window
//! backtests and forecast comparison statistics.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_qmle, FitResult, OptimizerConfig};
use crate::model_core::{self, GarchParams, InitPolicy, H_OVERFLOW};
use crate::optimizer::{nelder_mead, NelderMeadOptions};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelTag {
    #[serde(rename = "ERGI")]
    Ergi,
    #[serde(rename = "RealGARCH")]
    RealGarch,
    #[serde(rename = "HAR")]
    Har,
    #[serde(rename = "UGARCH")]
    Ugarch,
    #[serde(rename = "MeanRV")]
    MeanRv,
    /// Yesterday's RV carried forward.
    #[serde(rename = "PRV")]
    PrevRv,
}

impl ModelTag {
    pub const ALL: [ModelTag; 6] =
        [ModelTag::Ergi, ModelTag::RealGarch, ModelTag::Har, ModelTag::Ugarch, ModelTag::MeanRv, ModelTag::PrevRv];

    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Ergi => "ERGI",
            ModelTag::RealGarch => "RealGARCH",
            ModelTag::Har => "HAR",
            ModelTag::Ugarch => "UGARCH",
            ModelTag::MeanRv => "MeanRV",
            ModelTag::PrevRv => "PRV",
        }
    }

    pub fn parse(s: &str) -> Option<ModelTag> {
        ModelTag::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Forecasts of one model over the out-of-sample days. Failed fits leave a
/// NaN forecast and are listed in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub model_tag: ModelTag,
    pub horizon_days: Vec<usize>,
    pub forecasts: Vec<f64>,
    pub realized: Vec<f64>,
    pub failures: Vec<usize>,
}

impl ForecastSeries {
    pub fn new(model_tag: ModelTag, horizon_days: Vec<usize>, forecasts: Vec<f64>, realized: Vec<f64>) -> Result<Self> {
        if forecasts.len() != realized.len() || horizon_days.len() != realized.len() {
            return Err(Error::LengthMismatch { left: forecasts.len(), right: realized.len() });
        }
        let failures = horizon_days
            .iter()
            .zip(&forecasts)
            .filter(|(_, f)| !f.is_finite())
            .map(|(&d, _)| d)
            .collect();
        Ok(Self { model_tag, horizon_days, forecasts, realized, failures })
    }

    pub fn len(&self) -> usize {
        self.forecasts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forecasts.is_empty()
    }

    fn valid(&self, i: usize) -> bool {
        self.forecasts[i].is_finite()
    }
}

/// One-step forecast `exp(Ĥ_{n+1})` from a fitted ERGI model.
pub fn forecast_ergi(fit: &FitResult, rv: &[f64]) -> Result<f64> {
    forecast_ergi_params(&fit.theta_hat, rv, fit.init_policy)
}

pub fn forecast_ergi_params(theta: &GarchParams, rv: &[f64], policy: InitPolicy) -> Result<f64> {
    if rv.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("RV values must be positive".into()));
    }
    let log_rv: Vec<f64> = rv.iter().map(|v| v.ln()).collect();
    let mut h = Vec::with_capacity(rv.len() + 1);
    model_core::h_path_raw(theta.to_array(), &log_rv, policy, &mut h)?;
    let next = *h.last().expect("non-empty path");
    if h.iter().any(|v| v.abs() > H_OVERFLOW) {
        return Err(Error::Numerical(format!("log conditional variance {next} out of range")));
    }
    Ok(next.exp())
}

/// GARCH(1,1)-type recursion `h_i = ω + γ h_{i−1} + β x_{i−1}` fitted by
/// Gaussian QMLE, `−(1/n) Σ (log h_i + x_i/h_i)`, with `ω > 0`, `γ, β ≥ 0`
/// and `γ + β < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGarchFit {
    pub omega: f64,
    pub gamma: f64,
    pub beta: f64,
    pub h1: f64,
    pub objective: f64,
    pub converged: bool,
    pub forecast: f64,
}

impl LinearGarchFit {
    /// One-step forecast for a series using these parameters, with the
    /// recursion restarted at `x_1` (or the series mean for returns).
    pub fn forecast_on(&self, x: &[f64], h1: f64) -> f64 {
        linear_path(self.omega, self.gamma, self.beta, h1, x).1
    }
}

/// Returns the likelihood term sum and the forecast `h_{n+1}`.
fn linear_path(omega: f64, gamma: f64, beta: f64, h1: f64, x: &[f64]) -> (f64, f64) {
    let mut h = h1;
    let mut acc = 0.0;
    for &xi in x {
        if !(h > 0.0) {
            return (f64::INFINITY, f64::NAN);
        }
        acc += h.ln() + xi / h;
        h = omega + gamma * h + beta * xi;
    }
    (acc / x.len() as f64, h)
}

/// `(ω, γ, β) = (e^{u₀}, e^{u₁}/S, e^{u₂}/S)` with `S = 1 + e^{u₁} + e^{u₂}`.
fn linear_params(u: &[f64]) -> (f64, f64, f64) {
    let (e1, e2) = (u[1].exp(), u[2].exp());
    let s = 1.0 + e1 + e2;
    (u[0].exp(), e1 / s, e2 / s)
}

fn fit_linear_garch(x: &[f64], h1: f64) -> Result<LinearGarchFit> {
    let mean = stats::mean(x);
    if !(mean > 0.0) || !(h1 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let opts = NelderMeadOptions { f_tol: 1e-10, x_tol: 1e-7, max_iterations: 3000, max_restarts: 3 };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for &(g, b) in &[(0.6, 0.3), (0.2, 0.5), (0.85, 0.1), (0.0, 0.0)] {
        let gb = (g as f64, b as f64);
        let rest = 1.0 - gb.0 - gb.1;
        let u0 = [
            (mean * rest).ln(),
            (gb.0.max(1e-3) / rest).ln(),
            (gb.1.max(1e-3) / rest).ln(),
        ];
        let r = nelder_mead(
            |u| {
                let (w, gm, bt) = linear_params(u);
                linear_path(w, gm, bt, h1, x).0
            },
            &u0,
            &[0.5, 0.5, 0.5],
            &opts,
        );
        if best.as_ref().map_or(true, |b| r.f < b.1) {
            best = Some((r.x, r.f, r.converged));
        }
    }
    let (u, f, converged) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(Error::NonConvergence("linear GARCH likelihood is not finite".into()));
    }
    let (omega, gamma, beta) = linear_params(&u);
    let forecast = linear_path(omega, gamma, beta, h1, x).1;
    Ok(LinearGarchFit { omega, gamma, beta, h1, objective: -f, converged, forecast })
}

/// Linear realized GARCH on RV: `h_i = ω + γ h_{i−1} + β RV_{i−1}`,
/// `h_1 = RV_1`.
pub fn fit_realized_garch_linear(rv: &[f64]) -> Result<LinearGarchFit> {
    if rv.len() < 30 {
        return Err(Error::InsufficientData { needed: 30, got: rv.len() });
    }
    if rv.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("RV values must be positive and finite".into()));
    }
    fit_linear_garch(rv, rv[0])
}

/// GARCH(1,1) on open-to-close returns, `h_1` = mean squared return.
pub fn fit_ugarch(daily_returns: &[f64]) -> Result<LinearGarchFit> {
    if daily_returns.len() < 60 {
        return Err(Error::InsufficientData { needed: 60, got: daily_returns.len() });
    }
    if daily_returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("returns must be finite".into()));
    }
    let sq: Vec<f64> = daily_returns.iter().map(|r| r * r).collect();
    let h1 = stats::mean(&sq);
    if !(h1 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    fit_linear_garch(&sq, h1)
}

/// HAR regression `RV_t = c + a RV_{t−1} + b mean(RV_{t−5..t−1}) +
/// d mean(RV_{t−22..t−1})` by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarFit {
    /// `(c, a, b, d)`.
    pub coefficients: [f64; 4],
    pub std_errors: [f64; 4],
    pub rank_deficient: bool,
    pub forecast: f64,
}

const HAR_LAGS: [usize; 2] = [5, 22];

fn har_regressors(rv: &[f64], t: usize) -> [f64; 4] {
    let mean_back = |k: usize| rv[t - k..t].iter().sum::<f64>() / k as f64;
    [1.0, rv[t - 1], mean_back(HAR_LAGS[0]), mean_back(HAR_LAGS[1])]
}

impl HarFit {
    pub fn forecast_on(&self, rv: &[f64]) -> f64 {
        let x = har_regressors(rv, rv.len());
        (0..4).map(|i| self.coefficients[i] * x[i]).sum()
    }
}

pub fn fit_har(rv: &[f64]) -> Result<HarFit> {
    if rv.len() < 60 {
        return Err(Error::InsufficientData { needed: 60, got: rv.len() });
    }
    let first = HAR_LAGS[1];
    let rows = rv.len() - first;
    let x = DMatrix::from_fn(rows, 4, |r, c| har_regressors(rv, first + r)[c]);
    let y = DVector::from_iterator(rows, rv[first..].iter().copied());
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-10 * rows as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta = svd.solve(&y, tol).map_err(|e| Error::Numerical(e.to_string()))?;
    let resid = &y - &x * &beta;
    let dof = rows.saturating_sub(rank).max(1) as f64;
    let sigma2 = resid.norm_squared() / dof;
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx
        .pseudo_inverse(tol * max_sv)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let coefficients = [beta[0], beta[1], beta[2], beta[3]];
    let std_errors = std::array::from_fn(|i| (sigma2 * xtx_inv[(i, i)]).max(0.0).sqrt());
    let mut fit = HarFit { coefficients, std_errors, rank_deficient: rank < 4, forecast: 0.0 };
    fit.forecast = fit.forecast_on(rv);
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub window: usize,
    /// Parameters are re-estimated every this many out-of-sample days and
    /// reused (with the recursion run on the current window) in between.
    pub refit_every: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { window: 500, refit_every: 1, optimizer: OptimizerConfig::default() }
    }
}

enum Fitted {
    Ergi(GarchParams, InitPolicy),
    Linear(LinearGarchFit),
    Har(HarFit),
    None,
}

fn fit_model(tag: ModelTag, rv: &[f64], ret: Option<&[f64]>, cfg: &BacktestConfig) -> Result<Fitted> {
    Ok(match tag {
        ModelTag::Ergi => {
            let f = fit_qmle(rv, &cfg.optimizer)?;
            if !f.converged {
                return Err(Error::NonConvergence("ERGI fit did not converge".into()));
            }
            Fitted::Ergi(f.theta_hat, f.init_policy)
        }
        ModelTag::RealGarch => Fitted::Linear(fit_realized_garch_linear(rv)?),
        ModelTag::Ugarch => Fitted::Linear(fit_ugarch(ret.expect("checked by caller"))?),
        ModelTag::Har => Fitted::Har(fit_har(rv)?),
        ModelTag::MeanRv | ModelTag::PrevRv => Fitted::None,
    })
}

fn forecast_model(tag: ModelTag, fitted: &Fitted, rv: &[f64], ret: Option<&[f64]>) -> Result<f64> {
    let v = match (tag, fitted) {
        (ModelTag::Ergi, Fitted::Ergi(p, policy)) => forecast_ergi_params(p, rv, *policy)?,
        (ModelTag::RealGarch, Fitted::Linear(f)) => f.forecast_on(rv, rv[0]),
        (ModelTag::Ugarch, Fitted::Linear(f)) => {
            let sq: Vec<f64> = ret.expect("checked by caller").iter().map(|r| r * r).collect();
            f.forecast_on(&sq, stats::mean(&sq))
        }
        (ModelTag::Har, Fitted::Har(f)) => f.forecast_on(rv),
        (ModelTag::MeanRv, _) => stats::mean(rv),
        (ModelTag::PrevRv, _) => *rv.last().expect("non-empty window"),
        _ => unreachable!("fit and forecast tags match"),
    };
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Numerical(format!("{tag} forecast {v} is not positive")));
    }
    Ok(v)
}

/// Rolling one-step forecasts: for every day `t ≥ window` each model is
/// fitted on days `t − window, …, t − 1` and compared with `RV_t`.
pub fn rolling_backtest(
    rv: &[f64],
    returns: Option<&[f64]>,
    models: &[ModelTag],
    cfg: &BacktestConfig,
) -> Result<Vec<ForecastSeries>> {
    let n = rv.len();
    if cfg.window == 0 || n < cfg.window + 1 {
        return Err(Error::InsufficientData { needed: cfg.window + 1, got: n });
    }
    if cfg.refit_every == 0 {
        return Err(Error::InvalidInput("refit_every must be positive".into()));
    }
    if let Some(r) = returns {
        if r.len() != n {
            return Err(Error::LengthMismatch { left: n, right: r.len() });
        }
    } else if models.contains(&ModelTag::Ugarch) {
        return Err(Error::InvalidInput("UGARCH needs daily returns".into()));
    }
    let days: Vec<usize> = (cfg.window..n).collect();
    let realized: Vec<f64> = days.iter().map(|&t| rv[t]).collect();

    models
        .iter()
        .map(|&tag| {
            let fit_days: Vec<usize> = days.iter().copied().step_by(cfg.refit_every).collect();
            let fits: Vec<Option<Fitted>> = fit_days
                .par_iter()
                .map(|&t| {
                    let win = &rv[t - cfg.window..t];
                    let ret = returns.map(|r| &r[t - cfg.window..t]);
                    fit_model(tag, win, ret, cfg).ok()
                })
                .collect();
            let forecasts: Vec<f64> = days
                .par_iter()
                .map(|&t| {
                    let block = (t - cfg.window) / cfg.refit_every;
                    let win = &rv[t - cfg.window..t];
                    let ret = returns.map(|r| &r[t - cfg.window..t]);
                    match &fits[block] {
                        Some(f) => forecast_model(tag, f, win, ret).unwrap_or(f64::NAN),
                        None => f64::NAN,
                    }
                })
                .collect();
            ForecastSeries::new(tag, days.clone(), forecasts, realized.clone())
        })
        .collect()
}

fn check_nonempty(f: &ForecastSeries) -> Result<()> {
    if (0..f.len()).all(|i| !f.valid(i)) {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(())
}

/// `(1/n) Σ (Vol − RV)²` over days with a forecast.
pub fn mspe(f: &ForecastSeries) -> Result<f64> {
    check_nonempty(f)?;
    let v: Vec<f64> = (0..f.len()).filter(|&i| f.valid(i)).map(|i| (f.forecasts[i] - f.realized[i]).powi(2)).collect();
    Ok(stats::mean(&v))
}

/// `(1/n) Σ ((Vol − RV)/RV)²`.
pub fn rmspe(f: &ForecastSeries) -> Result<f64> {
    check_nonempty(f)?;
    let mut v = Vec::with_capacity(f.len());
    for i in (0..f.len()).filter(|&i| f.valid(i)) {
        if f.realized[i] <= 1e-12 {
            return Err(Error::Domain("RV at or below 1e-12 in a relative error".into()));
        }
        v.push(((f.forecasts[i] - f.realized[i]) / f.realized[i]).powi(2));
    }
    Ok(stats::mean(&v))
}

fn aligned(a: &ForecastSeries, b: &ForecastSeries) -> Result<Vec<usize>> {
    if a.len() != b.len() || a.realized != b.realized || a.horizon_days != b.horizon_days {
        return Err(Error::InvalidInput("forecast series are not aligned".into()));
    }
    Ok((0..a.len()).filter(|&i| a.valid(i) && b.valid(i)).collect())
}

/// Out-of-sample R², `1 − Σ(RV − Vol*)² / Σ(RV − Vol)²`, for the candidate
/// `Vol*` against the competitor `Vol`, over days where both forecast.
pub fn osr(candidate: &ForecastSeries, competitor: &ForecastSeries) -> Result<f64> {
    let idx = aligned(candidate, competitor)?;
    let sse = |f: &ForecastSeries| idx.iter().map(|&i| (f.realized[i] - f.forecasts[i]).powi(2)).sum::<f64>();
    let den = sse(competitor);
    if !(den > 0.0) {
        return Err(Error::Domain("competitor has zero squared error".into()));
    }
    Ok(1.0 - sse(candidate) / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    /// p-value against "the first model is more accurate".
    pub p_less: f64,
    /// p-value against "the second model is more accurate".
    pub p_greater: f64,
    pub n_used: usize,
}

/// Newey–West long-run variance with Bartlett weights.
pub fn newey_west_variance(d: &[f64], lag: usize) -> f64 {
    let n = d.len() as f64;
    let m = stats::mean(d);
    let autocov = |l: usize| d[l..].iter().zip(d).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n;
    let mut lrv = autocov(0);
    for l in 1..=lag.min(d.len().saturating_sub(1)) {
        lrv += 2.0 * (1.0 - l as f64 / (lag as f64 + 1.0)) * autocov(l);
    }
    lrv
}

/// Diebold–Mariano test on `d_i = e*_i² − e_i²` with Newey–West lag
/// `⌊n^{1/3}⌋`.
pub fn dm_test(e_star: &[f64], e: &[f64]) -> Result<DmResult> {
    if e_star.len() != e.len() {
        return Err(Error::LengthMismatch { left: e_star.len(), right: e.len() });
    }
    let d: Vec<f64> = e_star.iter().zip(e).map(|(a, b)| a * a - b * b).filter(|v| !v.is_nan()).collect();
    let n = d.len();
    if n < 10 {
        return Err(Error::InsufficientData { needed: 10, got: n });
    }
    let lag = (n as f64).cbrt().floor() as usize;
    let lrv = newey_west_variance(&d, lag);
    let first = d[0];
    if d.iter().all(|&v| v == first) || !(lrv > 0.0) {
        return Err(Error::IdenticalForecasts);
    }
    let stat = stats::mean(&d) / (lrv / n as f64).sqrt();
    let p_less = stats::normal_cdf(stat);
    Ok(DmResult { statistic: stat, p_less, p_greater: 1.0 - p_less, n_used: n })
}

/// Diebold–Mariano test between two aligned forecast series; days where
/// either model failed are dropped.
pub fn dm_between(first: &ForecastSeries, second: &ForecastSeries) -> Result<DmResult> {
    let idx = aligned(first, second)?;
    let err = |f: &ForecastSeries| idx.iter().map(|&i| f.forecasts[i] - f.realized[i]).collect::<Vec<_>>();
    dm_test(&err(first), &err(second))
}

/// Ranks with ties sharing the average rank; 1 is the smallest loss.
pub fn rank_losses(losses: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    let mut ranks = vec![0.0; losses.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && losses[idx[j + 1]] == losses[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Average ranks and first-place counts over units (days, replications or
/// assets), each a slice of one loss per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub average_rank: Vec<f64>,
    pub first_place: Vec<usize>,
    pub units: usize,
}

pub fn average_ranks(per_unit_losses: &[Vec<f64>]) -> Result<RankSummary> {
    let k = per_unit_losses.first().map_or(0, |u| u.len());
    if k == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut sum = vec![0.0; k];
    let mut wins = vec![0; k];
    let mut units = 0;
    for losses in per_unit_losses {
        if losses.len() != k {
            return Err(Error::LengthMismatch { left: k, right: losses.len() });
        }
        if losses.iter().any(|l| !l.is_finite()) {
            continue;
        }
        let r = rank_losses(losses);
        for (s, v) in sum.iter_mut().zip(&r) {
            *s += v;
        }
        for (w, v) in wins.iter_mut().zip(&r) {
            if *v == 1.0 {
                *w += 1;
            }
        }
        units += 1;
    }
    if units == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(RankSummary { average_rank: sum.iter().map(|s| s / units as f64).collect(), first_place: wins, units })
}

/// Per-day squared errors of several aligned series, one row per day with
/// a forecast from every model.
pub fn daily_squared_errors(series: &[ForecastSeries]) -> Result<Vec<Vec<f64>>> {
    let first = series.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    for s in series {
        aligned(first, s)?;
    }
    Ok((0..first.len())
        .filter(|&i| series.iter().all(|s| s.valid(i)))
        .map(|i| series.iter().map(|s| (s.forecasts[i] - s.realized[i]).powi(2)).collect())
        .collect())
}
