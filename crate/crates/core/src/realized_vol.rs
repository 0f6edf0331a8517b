//! Jump-robust pre-averaging realized volatility.
//!
//! For one day of noisy log-prices `Y_1, …, Y_m` the estimator is
//!
//! ```text
//! RV = 1/(ψK) Σ_{k=1}^{m−K+1} {Ȳ_k² − ½ Ŷ_k²} 1{|Ȳ_k| ≤ τ_m}
//! ```
//!
//! with `g(x) = min(x, 1−x)`, `K = ⌊√m⌋`, pre-averaged returns
//! `Ȳ_k = Σ_{l=1}^{K−1} g(l/K) ΔY_{k+l}`, noise correction
//! `Ŷ_k² = Σ_{l=1}^{K} {g(l/K) − g((l−1)/K)}² ΔY_{k+l−1}²` and truncation
//! level `τ_m = c_τ m^{−0.235}`.
//!
//! Indices are 0-based in the code: window `k` covers prices `k..k+K`.
//! The first window's noise term refers to the return into `Y_1`, which
//! does not exist; that term is skipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Multiplier of the pre-averaged s.d. used for simulated data.
pub const C_TAU_SIMULATION: f64 = 4.0;
/// Multiplier used for empirical data.
pub const C_TAU_EMPIRICAL: f64 = 10.0;
/// Exponent of `m` in the truncation level.
pub const TRUNCATION_EXPONENT: f64 = -0.235;

/// One day of timestamped log-prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickDay {
    pub day_index: i64,
    /// Fraction of the trading day; strictly increasing.
    pub timestamps: Vec<f64>,
    pub log_prices: Vec<f64>,
}

impl TickDay {
    pub fn new(day_index: i64, timestamps: Vec<f64>, log_prices: Vec<f64>) -> Result<Self> {
        let day = Self { day_index, timestamps, log_prices };
        day.validate()?;
        Ok(day)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.log_prices.len() {
            return Err(Error::LengthMismatch {
                left: self.timestamps.len(),
                right: self.log_prices.len(),
            });
        }
        if self.log_prices.iter().chain(&self.timestamps).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("day {}: non-finite value", self.day_index)));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "day {}: timestamps not strictly increasing",
                self.day_index
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.log_prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prices.is_empty()
    }
}

/// A daily integrated-variance estimate with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RvEstimate {
    pub value: f64,
    pub k_window: usize,
    pub m_obs: usize,
    pub truncation_level: f64,
    pub truncated_count: usize,
    /// Set when the raw estimate was negative and has been floored at 0.
    pub floored: bool,
}

/// Weight function `g(x) = min(x, 1 − x)`.
pub fn weight(x: f64) -> f64 {
    x.min(1.0 - x)
}

/// `ψ = ∫₀¹ g(t)² dt = 1/12`.
pub fn psi_constant() -> f64 {
    1.0 / 12.0
}

/// `∫₀¹ g(t)² dt` for an arbitrary weight by the composite midpoint rule.
/// Rejects weights whose `ψ` is not positive.
pub fn psi_quadrature<G: Fn(f64) -> f64>(g: G, points: usize) -> Result<f64> {
    if points == 0 {
        return Err(Error::InvalidInput("quadrature needs at least one point".into()));
    }
    let h = 1.0 / points as f64;
    let psi = (0..points).map(|i| g((i as f64 + 0.5) * h).powi(2)).sum::<f64>() * h;
    if !(psi > 0.0) {
        return Err(Error::Domain("psi must be positive".into()));
    }
    Ok(psi)
}

/// `K = ⌊√m⌋`.
pub fn bandwidth(m: usize) -> usize {
    let mut k = (m as f64).sqrt() as usize;
    // Guard against rounding in the square root for perfect squares.
    while (k + 1) * (k + 1) <= m {
        k += 1;
    }
    while k * k > m {
        k -= 1;
    }
    k
}

/// `Ȳ` for the window whose first price has 0-based index `k_start`.
///
/// This is the reference O(K) evaluation, used for single windows; the
/// daily estimator uses [`preaveraged_increments`].
pub fn preaveraged_increment(day: &TickDay, k_start: usize, k: usize) -> Result<f64> {
    let y = &day.log_prices;
    if k < 2 || k_start + k > y.len() {
        return Err(Error::Index(format!(
            "window [{k_start}, {}) with K = {k} exceeds {} observations",
            k_start + k,
            y.len()
        )));
    }
    let kf = k as f64;
    Ok((1..k).map(|l| weight(l as f64 / kf) * (y[k_start + l] - y[k_start + l - 1])).sum())
}

/// All `m − K + 1` pre-averaged returns of the day.
///
/// Summation by parts gives `Ȳ_k = (1/K)(Σ_{l=K−h}^{K−1} Y_{k+l} −
/// Σ_{l=0}^{h−1} Y_{k+l})` with `h = ⌊K/2⌋`, so each value is a difference of
/// two window sums. Prefix sums are carried in double-double arithmetic on
/// prices centred at the first observation.
pub fn preaveraged_increments(y: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 2 || y.len() < k {
        return Err(Error::InsufficientData { needed: k.max(2), got: y.len() });
    }
    let prefix = prefix_sums_dd(y);
    let h = k / 2;
    let inv_k = 1.0 / k as f64;
    let windows = y.len() - k + 1;
    Ok((0..windows)
        .map(|s| {
            let hi = dd_range(&prefix, s + k - h, s + k);
            let lo = dd_range(&prefix, s, s + h);
            inv_k * dd_to_f64(dd_sub(hi, lo))
        })
        .collect())
}

type Dd = (f64, f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn dd_add(a: Dd, b: f64) -> Dd {
    let (s, e) = two_sum(a.0, b);
    let (hi, lo) = two_sum(s, e + a.1);
    (hi, lo)
}

fn dd_sub(a: Dd, b: Dd) -> Dd {
    let (s, e) = two_sum(a.0, -b.0);
    two_sum(s, e + a.1 - b.1)
}

fn dd_to_f64(a: Dd) -> f64 {
    a.0 + a.1
}

/// `prefix[i] = Σ_{j<i} (y_j − y_0)`.
fn prefix_sums_dd(y: &[f64]) -> Vec<Dd> {
    let base = y[0];
    let mut out = Vec::with_capacity(y.len() + 1);
    let mut acc = (0.0, 0.0);
    out.push(acc);
    for &v in y {
        acc = dd_add(acc, v - base);
        out.push(acc);
    }
    out
}

fn dd_range(prefix: &[Dd], from: usize, to: usize) -> Dd {
    dd_sub(prefix[to], prefix[from])
}

/// Noise-correction terms `Ŷ_k²` for every window, skipping the missing
/// return before the first observation.
fn noise_corrections(y: &[f64], k: usize) -> Vec<f64> {
    // r2_prefix[i] = Σ_{1≤j<i} (y_j − y_{j−1})²; index 0 contributes nothing.
    let mut r2_prefix = Vec::with_capacity(y.len() + 1);
    r2_prefix.push(0.0);
    r2_prefix.push(0.0);
    let mut acc = 0.0;
    for w in y.windows(2) {
        acc += (w[1] - w[0]).powi(2);
        r2_prefix.push(acc);
    }
    let kf = k as f64;
    let inv_k2 = 1.0 / (kf * kf);
    // For odd K the middle increment g((h+1)/K) − g(h/K) is zero.
    let middle = (k % 2 == 1).then_some(k / 2);
    let ret2 = |i: usize| if i == 0 { 0.0 } else { (y[i] - y[i - 1]).powi(2) };
    (0..=y.len() - k)
        .map(|s| {
            // Returns into prices s, …, s+K−1.
            let mut v = r2_prefix[s + k] - r2_prefix[s];
            if let Some(h) = middle {
                v -= ret2(s + h);
            }
            v * inv_k2
        })
        .collect()
}

/// Switches for [`prv_with`]. The defaults give the full estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrvOptions {
    pub c_tau_multiplier: f64,
    pub truncate: bool,
    pub noise_correction: bool,
}

impl Default for PrvOptions {
    fn default() -> Self {
        Self { c_tau_multiplier: C_TAU_SIMULATION, truncate: true, noise_correction: true }
    }
}

/// The jump-robust pre-averaging estimator for one day.
pub fn jump_robust_prv(day: &TickDay, c_tau_multiplier: f64) -> Result<RvEstimate> {
    prv_with(day, PrvOptions { c_tau_multiplier, ..PrvOptions::default() })
}

pub fn prv_with(day: &TickDay, opts: PrvOptions) -> Result<RvEstimate> {
    if !(opts.c_tau_multiplier > 0.0) {
        return Err(Error::InvalidInput("c_tau multiplier must be positive".into()));
    }
    let y = &day.log_prices;
    let m = y.len();
    let k = bandwidth(m);
    if m < k + 2 || k < 2 {
        return Err(Error::InsufficientData { needed: k.max(2) + 2, got: m });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("day {}: non-finite price", day.day_index)));
    }
    let ybar = preaveraged_increments(y, k)?;
    let yhat2 = noise_corrections(y, k);

    let mf = m as f64;
    let scaled: Vec<f64> = ybar.iter().map(|v| v * mf.powf(0.25)).collect();
    let sd = stats::sample_sd(&scaled);
    let tau = if opts.truncate {
        opts.c_tau_multiplier * sd * mf.powf(TRUNCATION_EXPONENT)
    } else {
        f64::INFINITY
    };

    let mut sum = 0.0;
    let mut truncated = 0;
    for (yb, yh) in ybar.iter().zip(&yhat2) {
        // Equality keeps the window, so constant prices (τ = 0) truncate nothing.
        if yb.abs() <= tau {
            sum += yb * yb - if opts.noise_correction { 0.5 * yh } else { 0.0 };
        } else {
            truncated += 1;
        }
    }
    let raw = sum / (psi_constant() * k as f64);
    Ok(RvEstimate {
        value: raw.max(0.0),
        k_window: k,
        m_obs: m,
        truncation_level: tau,
        truncated_count: truncated,
        floored: raw < 0.0,
    })
}

/// `(1/n) Σ ((RV_i − IV_i)/RV_i)²`, with RV in the denominator.
pub fn relative_error(rv: &[f64], iv: &[f64]) -> Result<f64> {
    if rv.len() != iv.len() {
        return Err(Error::LengthMismatch { left: rv.len(), right: iv.len() });
    }
    if rv.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if rv.iter().any(|&r| r <= 1e-12) {
        return Err(Error::Domain("RV at or below 1e-12 in a relative-error denominator".into()));
    }
    Ok(rv.iter().zip(iv).map(|(r, i)| ((r - i) / r).powi(2)).sum::<f64>() / rv.len() as f64)
}
