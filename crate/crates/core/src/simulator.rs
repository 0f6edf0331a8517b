//! Euler simulation of the ERGI jump-diffusion and the Monte-Carlo oracle
//! for `log E[exp(D_n)]`.
//!
//! Within day `n` (intraday time `s ∈ [0, 1]`) the state is the running
//! average `σ̄²` of the spot variance and the drift process `b`:
//!
//! ```text
//! σ²_s = σ̄²_s (1 + s b_s)
//! b_s  = b_{n−1} + s(ω + (γ−1)b_{n−1}) + β log σ̄²_s
//!        − (1−s)(β + β* s) log σ²_{n−1} + ν(1−s) Z_s²
//! ```
//!
//! The simulator steps `L = log σ̄²` with `dL = b ds`, which is the
//! differential form of the definition of `σ̄²`. Stepping `L` rather than a
//! running integral of `σ²` keeps `σ̄²` positive. The spot variance itself
//! can turn negative for these dynamics; the price then diffuses with the
//! positive part of the per-step variance, rescaled so that the day's
//! quadratic variation equals the integrated variance.

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_core::{self, StructuralParams};
use crate::realized_vol::TickDay;
use crate::rng::{SeedTree, StreamKind};

/// Ratio of spot variance to its day-start value treated as a blow-up.
pub const BLOW_UP_RATIO: f64 = 1e6;
/// Smallest accepted replication count and grid for the MGF oracle.
pub const MIN_MGF_REPLICATIONS: usize = 10_000;
pub const MIN_MGF_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_days: usize,
    pub grid_steps_per_day: usize,
    pub obs_per_day: usize,
    pub noise_ratio: f64,
    pub jump_intensity: f64,
    pub jump_abs_size: f64,
    pub burn_in_days: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_days: 100,
            grid_steps_per_day: 11_700,
            obs_per_day: 390,
            noise_ratio: 0.01,
            jump_intensity: 10.0,
            jump_abs_size: 0.05,
            burn_in_days: 10,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_days == 0 {
            return Err(Error::InvalidInput("n_days must be positive".into()));
        }
        if self.obs_per_day < 2 || self.grid_steps_per_day < self.obs_per_day {
            return Err(Error::InvalidInput(format!(
                "need grid_steps_per_day ({}) >= obs_per_day ({}) >= 2",
                self.grid_steps_per_day, self.obs_per_day
            )));
        }
        if self.grid_steps_per_day % self.obs_per_day != 0 {
            return Err(Error::InvalidInput(format!(
                "obs_per_day ({}) must divide grid_steps_per_day ({})",
                self.obs_per_day, self.grid_steps_per_day
            )));
        }
        if !(self.noise_ratio >= 0.0) || !(self.jump_intensity >= 0.0) || !(self.jump_abs_size >= 0.0) {
            return Err(Error::InvalidInput(
                "noise_ratio, jump_intensity and jump_abs_size must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// State at an integer time: spot variance and `b` at the close.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayStart {
    pub spot_var: f64,
    pub b: f64,
}

/// Initial state used by [`simulate_with`]: `σ²₀ = exp(ω^g/(1−γ−β^g))`
/// from the implied GARCH parameters and `b₀ = ω/(1−γ)`.
pub fn initial_state(theta: &StructuralParams) -> DayStart {
    let log_mgf = model_core::log_mgf_d_riccati(theta).unwrap_or(0.0);
    let lrm = model_core::structural_to_garch(theta, log_mgf)
        .and_then(|g| model_core::long_run_mean(&g))
        .unwrap_or(0.0);
    let b = if (1.0 - theta.gamma()).abs() > 1e-12 { theta.omega() / (1.0 - theta.gamma()) } else { 0.0 };
    DayStart { spot_var: lrm.exp(), b }
}

/// One simulated day on the fine grid. Slices have `grid_steps_per_day + 1`
/// entries, the first being the state at the previous close.
#[derive(Debug)]
pub struct DayPath<'a> {
    /// 0-based index among the retained (post burn-in) days.
    pub day: usize,
    pub log_prices: &'a [f64],
    pub spot_var: &'a [f64],
    pub b_path: &'a [f64],
    pub jumps: &'a [Jump],
    pub true_iv: f64,
    /// `b_{n−1}`, the value carried in from the previous close.
    pub b_start: f64,
    pub b_end: f64,
    /// `σ²_n = IV_n(1 + b_n)`, the next day's starting spot variance.
    pub spot_var_end: f64,
    /// `|lhs − rhs|/rhs` of `∫σ² = σ²_{n−1} exp(∫b)` at the close, both
    /// sides by the trapezoidal rule on the grid.
    pub lemma_residual: f64,
    /// Integrated negative part of the spot variance relative to `true_iv`.
    pub negative_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// Owned per-day record of a simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub log_prices: Vec<f64>,
    pub spot_var: Vec<f64>,
    pub b_path: Vec<f64>,
    pub jumps: Vec<Jump>,
    pub true_iv: f64,
    pub b_start: f64,
    pub b_end: f64,
    pub lemma_residual: f64,
    pub negative_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub days: Vec<DayRecord>,
    pub grid_steps_per_day: usize,
}

impl PathRecord {
    pub fn true_iv(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.true_iv).collect()
    }
}

/// Compact per-day output for large runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub day: usize,
    pub true_iv: f64,
    pub b_start: f64,
    pub b_end: f64,
    pub lemma_residual: f64,
    pub negative_mass: f64,
    pub jump_count: usize,
}

impl DaySummary {
    fn from_path(p: &DayPath<'_>) -> Self {
        Self {
            day: p.day,
            true_iv: p.true_iv,
            b_start: p.b_start,
            b_end: p.b_end,
            lemma_residual: p.lemma_residual,
            negative_mass: p.negative_mass,
            jump_count: p.jumps.len(),
        }
    }
}

/// Noisy observations plus the per-day ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub ticks: Vec<TickDay>,
    pub days: Vec<DaySummary>,
}

impl SimulatedData {
    pub fn true_iv(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.true_iv).collect()
    }
}

struct Buffers {
    log_prices: Vec<f64>,
    spot_var: Vec<f64>,
    b_path: Vec<f64>,
    log_avg: Vec<f64>,
    jumps: Vec<Jump>,
}

/// Simulates `burn_in_days + n_days` days and hands every retained day to
/// `visit` in order. Buffers are reused between days.
pub fn simulate_with<F>(theta: &StructuralParams, cfg: &SimConfig, visit: F) -> Result<()>
where
    F: FnMut(&DayPath<'_>) -> Result<()>,
{
    simulate_from(theta, cfg, initial_state(theta), visit)
}

/// As [`simulate_with`], starting from an explicit state.
pub fn simulate_from<F>(theta: &StructuralParams, cfg: &SimConfig, start: DayStart, mut visit: F) -> Result<()>
where
    F: FnMut(&DayPath<'_>) -> Result<()>,
{
    cfg.validate()?;
    if !(start.spot_var > 0.0) || !start.b.is_finite() {
        return Err(Error::InvalidInput("initial spot variance must be positive".into()));
    }
    let n = cfg.grid_steps_per_day;
    let dt = 1.0 / n as f64;
    let sqrt_dt = dt.sqrt();
    let (omega, gamma, beta, nu, beta_star) =
        (theta.omega(), theta.gamma(), theta.beta(), theta.nu(), theta.beta_star());
    let tree = SeedTree::new(cfg.seed);
    let jump_law = if cfg.jump_intensity > 0.0 {
        Some(Poisson::new(cfg.jump_intensity).map_err(|e| Error::InvalidInput(e.to_string()))?)
    } else {
        None
    };

    let mut buf = Buffers {
        log_prices: vec![0.0; n + 1],
        spot_var: vec![0.0; n + 1],
        b_path: vec![0.0; n + 1],
        log_avg: vec![0.0; n + 1],
        jumps: Vec::new(),
    };
    let mut x = 0.0_f64;
    let mut spot = start.spot_var;
    let mut b_prev = start.b;

    for abs_day in 0..cfg.burn_in_days + cfg.n_days {
        let stream = abs_day as u64;
        let l0 = spot.ln();
        let day_cap = BLOW_UP_RATIO * spot;

        // Volatility pass.
        let mut vol_rng = tree.stream(StreamKind::VolatilityDriver, stream);
        let slope = omega + (gamma - 1.0) * b_prev;
        let mut l = l0;
        let mut b = b_prev;
        let mut z = 0.0_f64;
        buf.log_avg[0] = l0;
        buf.b_path[0] = b_prev;
        buf.spot_var[0] = spot;
        for k in 0..n {
            let dw: f64 = sqrt_dt * vol_rng.sample::<f64, _>(StandardNormal);
            l += b * dt;
            z += dw;
            let s = (k + 1) as f64 * dt;
            let u = 1.0 - s;
            b = b_prev + s * slope + beta * l - u * (beta + beta_star * s) * l0 + nu * u * z * z;
            let sv = l.exp() * (1.0 + s * b);
            if !sv.is_finite() || !b.is_finite() || sv > day_cap {
                return Err(Error::BlowUp {
                    day: abs_day,
                    reason: format!("spot variance {sv:e} exceeds {BLOW_UP_RATIO:e} x day-start value at s = {s:.5}"),
                });
            }
            buf.log_avg[k + 1] = l;
            buf.b_path[k + 1] = b;
            buf.spot_var[k + 1] = sv;
        }
        let true_iv = l.exp();
        let b_end = b;
        let spot_end = buf.spot_var[n];
        if !(spot_end > 0.0) {
            return Err(Error::BlowUp {
                day: abs_day,
                reason: format!("closing spot variance {spot_end:e} is not positive (b_n = {b_end})"),
            });
        }

        // Per-step integrated variance, v_k = s_{k+1} e^{L_{k+1}} − s_k e^{L_k}.
        let mut pos_mass = 0.0;
        let mut neg_mass = 0.0;
        let mut prev_cum = 0.0;
        for k in 0..n {
            let cum = (k + 1) as f64 * dt * buf.log_avg[k + 1].exp();
            let v = cum - prev_cum;
            prev_cum = cum;
            if v > 0.0 {
                pos_mass += v;
            } else {
                neg_mass -= v;
            }
            // Park the step variance in log_avg[k] (no longer needed).
            buf.log_avg[k] = v;
        }
        let scale = if pos_mass > 0.0 { true_iv / pos_mass } else { 0.0 };

        // Jumps.
        buf.jumps.clear();
        if let Some(law) = &jump_law {
            let mut jrng = tree.stream(StreamKind::Jumps, stream);
            let count = law.sample(&mut jrng) as usize;
            for _ in 0..count {
                let time: f64 = jrng.random();
                let sign = if jrng.random::<bool>() { 1.0 } else { -1.0 };
                buf.jumps.push(Jump { time, size: sign * cfg.jump_abs_size });
            }
            buf.jumps.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        }

        // Price pass.
        let mut price_rng = tree.stream(StreamKind::PriceDriver, stream);
        buf.log_prices[0] = x;
        let mut next_jump = 0;
        for k in 0..n {
            let zb: f64 = price_rng.sample::<f64, _>(StandardNormal);
            let v = buf.log_avg[k].max(0.0) * scale;
            x += v.sqrt() * zb;
            let t_end = (k + 1) as f64 * dt;
            while next_jump < buf.jumps.len() && buf.jumps[next_jump].time < t_end {
                x += buf.jumps[next_jump].size;
                next_jump += 1;
            }
            buf.log_prices[k + 1] = x;
        }

        let lemma_residual = {
            let trap = |v: &[f64]| (v.iter().sum::<f64>() - 0.5 * (v[0] + v[n])) * dt;
            let lhs = trap(&buf.spot_var);
            let rhs = spot * trap(&buf.b_path).exp();
            (lhs - rhs).abs() / rhs
        };

        if abs_day >= cfg.burn_in_days {
            let path = DayPath {
                day: abs_day - cfg.burn_in_days,
                log_prices: &buf.log_prices,
                spot_var: &buf.spot_var,
                b_path: &buf.b_path,
                jumps: &buf.jumps,
                true_iv,
                b_start: b_prev,
                b_end,
                spot_var_end: spot_end,
                lemma_residual,
                negative_mass: neg_mass / true_iv,
            };
            visit(&path)?;
        }
        spot = spot_end;
        b_prev = b_end;
    }
    Ok(())
}

/// Full-resolution path. Memory is about `40 · n_days · grid` bytes.
pub fn simulate_ergi(theta: &StructuralParams, cfg: &SimConfig) -> Result<PathRecord> {
    let mut days = Vec::with_capacity(cfg.n_days);
    simulate_with(theta, cfg, |p| {
        days.push(DayRecord {
            log_prices: p.log_prices.to_vec(),
            spot_var: p.spot_var.to_vec(),
            b_path: p.b_path.to_vec(),
            jumps: p.jumps.to_vec(),
            true_iv: p.true_iv,
            b_start: p.b_start,
            b_end: p.b_end,
            lemma_residual: p.lemma_residual,
            negative_mass: p.negative_mass,
        });
        Ok(())
    })?;
    Ok(PathRecord { days, grid_steps_per_day: cfg.grid_steps_per_day })
}

/// Subsamples `obs_per_day` equally spaced grid points starting at the open
/// (timestamps `j/m`, `j = 0, …, m−1`) and adds Gaussian noise with s.d.
/// `noise_ratio · √IV_d`.
fn noisy_day(day: usize, log_prices: &[f64], true_iv: f64, cfg: &SimConfig, tree: &SeedTree) -> TickDay {
    let m = cfg.obs_per_day;
    let stride = cfg.grid_steps_per_day / m;
    let sd = cfg.noise_ratio * true_iv.sqrt();
    let mut rng = tree.stream(StreamKind::Noise, day as u64);
    let timestamps = (0..m).map(|j| j as f64 / m as f64).collect();
    let prices = (0..m)
        .map(|j| {
            let x = log_prices[j * stride];
            if sd > 0.0 {
                let e: f64 = rng.sample::<f64, _>(StandardNormal);
                x + sd * e
            } else {
                x
            }
        })
        .collect();
    TickDay { day_index: day as i64, timestamps, log_prices: prices }
}

pub fn add_microstructure_noise(path: &PathRecord, cfg: &SimConfig) -> Result<Vec<TickDay>> {
    cfg.validate()?;
    if path.grid_steps_per_day != cfg.grid_steps_per_day {
        return Err(Error::InvalidInput("grid size differs from the path's".into()));
    }
    let tree = SeedTree::new(cfg.seed);
    Ok(path
        .days
        .iter()
        .enumerate()
        .map(|(d, rec)| noisy_day(d, &rec.log_prices, rec.true_iv, cfg, &tree))
        .collect())
}

/// Simulates and samples noisy observations without keeping the fine grid.
/// Produces the same observations as [`simulate_ergi`] followed by
/// [`add_microstructure_noise`].
pub fn simulate_observations(theta: &StructuralParams, cfg: &SimConfig) -> Result<SimulatedData> {
    let tree = SeedTree::new(cfg.seed);
    let mut ticks = Vec::with_capacity(cfg.n_days);
    let mut days = Vec::with_capacity(cfg.n_days);
    simulate_with(theta, cfg, |p| {
        ticks.push(noisy_day(p.day, p.log_prices, p.true_iv, cfg, &tree));
        days.push(DaySummary::from_path(p));
        Ok(())
    })?;
    Ok(SimulatedData { ticks, days })
}

/// Monte-Carlo estimate of `log E[exp(D_n)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfEstimate {
    pub log_mgf: f64,
    /// Delta-method standard error of `log_mgf`.
    pub std_error: f64,
    pub mean_d: f64,
    pub mean_d_std_error: f64,
    pub replications: usize,
    pub steps: usize,
}

const MGF_CHUNK: usize = 2_000;

/// Simulates `D_n = 2ν ∫₀¹ k(1−t) Z_t dW_t` with `Z_t = W_t` by left-point
/// Euler sums on `steps` intervals and returns `log(mean exp D)`.
///
/// Replications are split into fixed chunks, each with its own substream,
/// so the result does not depend on the thread count.
///
/// `E[exp(D)]` is finite at the reference parameters but `E[exp(2D)]` is
/// not, so the reported standard error is itself a noisy, downward-biased
/// estimate of the spread.
pub fn estimate_log_mgf_d(
    theta: &StructuralParams,
    replications: usize,
    steps: usize,
    seed: u64,
) -> Result<MgfEstimate> {
    if replications < MIN_MGF_REPLICATIONS || steps < MIN_MGF_STEPS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_MGF_REPLICATIONS} replications and {MIN_MGF_STEPS} steps"
        )));
    }
    if theta.nu() == 0.0 {
        return Ok(MgfEstimate {
            log_mgf: 0.0,
            std_error: 0.0,
            mean_d: 0.0,
            mean_d_std_error: 0.0,
            replications,
            steps,
        });
    }
    let dt = 1.0 / steps as f64;
    let sqrt_dt = dt.sqrt();
    let weights: Vec<f64> = (0..steps)
        .map(|k| 2.0 * theta.nu() * model_core::d_kernel(theta.beta(), 1.0 - k as f64 * dt))
        .collect();
    let tree = SeedTree::new(seed);
    let chunks = replications.div_ceil(MGF_CHUNK);

    let sums: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let reps = MGF_CHUNK.min(replications - c * MGF_CHUNK);
            let mut rng = tree.stream(StreamKind::MgfReplication, c as u64);
            let mut acc = [0.0; 4];
            for _ in 0..reps {
                let d = one_d(&weights, sqrt_dt, &mut rng);
                let e = d.exp();
                acc[0] += e;
                acc[1] += e * e;
                acc[2] += d;
                acc[3] += d * d;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for s in &sums {
        for i in 0..4 {
            tot[i] += s[i];
        }
    }
    let r = replications as f64;
    let mean_e = tot[0] / r;
    let var_e = (tot[1] / r - mean_e * mean_e) * r / (r - 1.0);
    let mean_d = tot[2] / r;
    let var_d = (tot[3] / r - mean_d * mean_d) * r / (r - 1.0);
    let std_error = (var_e / r).sqrt() / mean_e;
    if std_error > 1e-2 {
        warn!("log E[exp(D)] Monte-Carlo standard error {std_error:.3e} exceeds 1e-2");
    }
    Ok(MgfEstimate {
        log_mgf: mean_e.ln(),
        std_error,
        mean_d,
        mean_d_std_error: (var_d / r).sqrt(),
        replications,
        steps,
    })
}

#[inline]
fn one_d(weights: &[f64], sqrt_dt: f64, rng: &mut ChaCha8Rng) -> f64 {
    let mut z = 0.0_f64;
    let mut d = 0.0_f64;
    for &w in weights {
        let dw: f64 = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
        d += w * z * dw;
        z += dw;
    }
    d
}
