//! Quasi-maximum likelihood estimation of `θ^g = (ω^g, γ, β^g)` from a
//! realized-volatility series, with the sandwich-free asymptotic variance
//! `Â V̂⁻¹ / n` and Z-statistics.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_core::{self, floor_rv, GarchParams, InitPolicy};
use crate::optimizer::{nelder_mead, NelderMeadOptions};
use crate::rng::{SeedTree, StreamKind};
use crate::stats;

/// Minimum series length accepted by [`fit_qmle`].
pub const MIN_FIT_DAYS: usize = 30;
/// Points with `|γ + β^g|` at or above `1 − STATIONARITY_MARGIN` are rejected.
pub const STATIONARITY_MARGIN: f64 = 1e-6;
/// `V̂` is treated as singular when its smallest eigenvalue is below this
/// fraction of the largest.
pub const SINGULAR_RCOND: f64 = 1e-10;

/// Which residual is averaged in `Â`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AFormula {
    /// `((RV_i − exp Ĥ_i)/exp Ĥ_i)²`, the second moment of `M_i − 1`.
    #[default]
    ExpH,
    /// `((RV_i − Ĥ_i)/Ĥ_i)²`, dividing by the log-scale value itself.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub omega_bounds: (f64, f64),
    pub gamma_bounds: (f64, f64),
    pub beta_bounds: (f64, f64),
    pub multistart_count: usize,
    /// Convergence tolerance on the objective.
    pub tolerance: f64,
    /// Convergence tolerance on the transformed parameters.
    pub x_tolerance: f64,
    pub max_iterations: usize,
    pub init_policy: InitPolicy,
    pub a_formula: AFormula,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            omega_bounds: (-10.0, 10.0),
            gamma_bounds: (-0.999, 0.999),
            beta_bounds: (-0.999, 0.999),
            multistart_count: 8,
            tolerance: 1e-8,
            x_tolerance: 1e-7,
            max_iterations: 2000,
            init_policy: InitPolicy::FirstLogRv,
            a_formula: AFormula::ExpH,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let boxes = [self.omega_bounds, self.gamma_bounds, self.beta_bounds];
        if boxes.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi) {
            return Err(Error::InvalidInput("bounds must be finite with lower < upper".into()));
        }
        for (name, (lo, hi)) in [("gamma", self.gamma_bounds), ("beta", self.beta_bounds)] {
            if lo <= -1.0 || hi >= 1.0 {
                return Err(Error::InvalidInput(format!("{name} bounds must lie inside (-1, 1)")));
            }
        }
        if self.multistart_count == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidInput("multistart_count and max_iterations must be positive".into()));
        }
        if !(self.tolerance > 0.0) || !(self.x_tolerance > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn bounds(&self) -> [(f64, f64); 3] {
        [self.omega_bounds, self.gamma_bounds, self.beta_bounds]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: GarchParams,
    /// Maximised quasi-likelihood `L̂(θ̂)`.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub a_hat: f64,
    pub v_hat: [[f64; 3]; 3],
    pub std_errors: [f64; 3],
    pub singular_v: bool,
    pub n_days: usize,
    pub init_policy: InitPolicy,
    /// RV values raised to the floor before taking logs.
    pub floored: usize,
}

/// One Z-statistic with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZStat {
    pub z: f64,
    pub p_value: f64,
}

/// Maps an unconstrained vector onto the box.
fn to_box(u: &[f64], bounds: &[(f64, f64); 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let (lo, hi) = bounds[i];
        out[i] = lo + (hi - lo) * 0.5 * (1.0 + u[i].tanh());
    }
    out
}

fn from_box(x: [f64; 3], bounds: &[(f64, f64); 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let (lo, hi) = bounds[i];
        let t = (2.0 * (x[i] - lo) / (hi - lo) - 1.0).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        out[i] = t.atanh();
    }
    out
}

struct Prepared {
    rv: Vec<f64>,
    log_rv: Vec<f64>,
    floored: usize,
}

fn prepare(rv: &[f64], min_len: usize) -> Result<Prepared> {
    if rv.len() < min_len {
        return Err(Error::InsufficientData { needed: min_len, got: rv.len() });
    }
    if rv.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("RV series contains non-finite values".into()));
    }
    let f = floor_rv(rv);
    let log_rv = f.values.iter().map(|v| v.ln()).collect();
    Ok(Prepared { rv: f.values, log_rv, floored: f.floored })
}

fn neg_likelihood(theta: [f64; 3], p: &Prepared, policy: InitPolicy, scratch: &mut Vec<f64>) -> f64 {
    if (theta[1] + theta[2]).abs() >= 1.0 - STATIONARITY_MARGIN {
        return f64::INFINITY;
    }
    match model_core::quasi_likelihood_raw(theta, &p.rv, &p.log_rv, policy, scratch) {
        Ok(l) if l.is_finite() => -l,
        _ => f64::INFINITY,
    }
}

/// Start points: intercepts matched to the sample mean of `log RV`, and
/// `(γ, β^g)` from a Latin hypercube on `[−0.2, 0.9]²`, shrunk into the
/// stationary region where needed.
fn start_points(p: &Prepared, cfg: &OptimizerConfig) -> Vec<[f64; 3]> {
    let k = cfg.multistart_count;
    let mean_log = stats::mean(&p.log_rv);
    let mut rng = SeedTree::new(cfg.seed).stream(StreamKind::Multistart, 0);
    let mut strata_b: Vec<usize> = (0..k).collect();
    // Fisher–Yates on the second coordinate's strata.
    for i in (1..k).rev() {
        let j = rng.random_range(0..=i);
        strata_b.swap(i, j);
    }
    let (lo, hi) = (-0.2, 0.9);
    let clamp_in = |v: f64, (l, h): (f64, f64)| v.clamp(l + 1e-3 * (h - l), h - 1e-3 * (h - l));
    (0..k)
        .map(|i| {
            let ug: f64 = rng.random();
            let ub: f64 = rng.random();
            let mut g = lo + (hi - lo) * (i as f64 + ug) / k as f64;
            let mut b = lo + (hi - lo) * (strata_b[i] as f64 + ub) / k as f64;
            let s = (g + b).abs();
            if s > 0.98 {
                g *= 0.98 / s;
                b *= 0.98 / s;
            }
            g = clamp_in(g, cfg.gamma_bounds);
            b = clamp_in(b, cfg.beta_bounds);
            let w = clamp_in(mean_log * (1.0 - g - b), cfg.omega_bounds);
            [w, g, b]
        })
        .collect()
}

struct LocalFit {
    theta: [f64; 3],
    neg_l: f64,
    converged: bool,
    iterations: usize,
}

fn local_fit(p: &Prepared, cfg: &OptimizerConfig, start: [f64; 3]) -> LocalFit {
    let bounds = cfg.bounds();
    let u0 = from_box(start, &bounds);
    let mut scratch = Vec::with_capacity(p.rv.len() + 1);
    let opts = NelderMeadOptions {
        f_tol: cfg.tolerance,
        x_tol: cfg.x_tolerance,
        max_iterations: cfg.max_iterations,
        max_restarts: 3,
    };
    let r = nelder_mead(
        |u| neg_likelihood(to_box(u, &bounds), p, cfg.init_policy, &mut scratch),
        &u0,
        &[0.3, 0.3, 0.3],
        &opts,
    );
    LocalFit {
        theta: to_box(&r.x, &bounds),
        neg_l: r.f,
        converged: r.converged && r.f.is_finite(),
        iterations: r.iterations,
    }
}

/// Maximises the quasi-likelihood over the box with multistart simplex
/// searches and fills in the inference quantities.
pub fn fit_qmle(rv: &[f64], cfg: &OptimizerConfig) -> Result<FitResult> {
    fit_inner(rv, cfg, None)
}

/// As [`fit_qmle`], with `warm` added to the start points. If no search
/// improves on `warm` by more than the tolerance, `warm` itself is
/// returned, so refitting a fitted model is idempotent.
pub fn fit_qmle_warm(rv: &[f64], cfg: &OptimizerConfig, warm: &GarchParams) -> Result<FitResult> {
    fit_inner(rv, cfg, Some(warm.to_array()))
}

fn fit_inner(rv: &[f64], cfg: &OptimizerConfig, warm: Option<[f64; 3]>) -> Result<FitResult> {
    cfg.validate()?;
    let p = prepare(rv, MIN_FIT_DAYS)?;
    let mut starts = start_points(&p, cfg);
    if let Some(w) = warm {
        starts.insert(0, w);
    }
    let fits: Vec<LocalFit> = starts.par_iter().map(|&s| local_fit(&p, cfg, s)).collect();

    // Prefer converged searches; ties go to the earlier start.
    let pick = |only_converged: bool| {
        fits.iter()
            .filter(|f| f.neg_l.is_finite() && (f.converged || !only_converged))
            .min_by(|a, b| a.neg_l.total_cmp(&b.neg_l))
    };
    let best = pick(true).or_else(|| pick(false)).ok_or_else(|| {
        Error::NonConvergence("no start point reached a finite quasi-likelihood".into())
    })?;
    let mut theta = best.theta;
    let mut neg_l = best.neg_l;
    let converged = fits.iter().any(|f| f.converged);
    if let Some(w) = warm {
        let mut scratch = Vec::new();
        let warm_neg = neg_likelihood(w, &p, cfg.init_policy, &mut scratch);
        if warm_neg.is_finite() && warm_neg - neg_l <= cfg.tolerance {
            theta = w;
            neg_l = warm_neg;
        }
    }
    let theta_hat = GarchParams::from_array(theta)?;
    let a_hat = a_from_prepared(&theta_hat, &p, cfg.init_policy, cfg.a_formula)?;
    let v_hat = v_from_prepared(&theta_hat, &p, cfg.init_policy)?;
    let (std_errors, singular_v) = standard_errors(a_hat, &v_hat, p.rv.len());
    Ok(FitResult {
        theta_hat,
        objective: -neg_l,
        converged,
        iterations: best.iterations,
        a_hat,
        v_hat,
        std_errors,
        singular_v,
        n_days: p.rv.len(),
        init_policy: cfg.init_policy,
        floored: p.floored,
    })
}

/// `Â = (1/n) Σ ((RV_i − exp Ĥ_i)/exp Ĥ_i)²`.
pub fn estimate_a(theta: &GarchParams, rv: &[f64]) -> Result<f64> {
    estimate_a_with(theta, rv, InitPolicy::default(), AFormula::default())
}

pub fn estimate_a_with(theta: &GarchParams, rv: &[f64], policy: InitPolicy, formula: AFormula) -> Result<f64> {
    a_from_prepared(theta, &prepare(rv, 1)?, policy, formula)
}

fn a_from_prepared(theta: &GarchParams, p: &Prepared, policy: InitPolicy, formula: AFormula) -> Result<f64> {
    let h = model_core::h_recursion(theta, &p.log_rv, policy)?;
    let n = p.rv.len() as f64;
    let sum: f64 = h
        .values
        .iter()
        .zip(&p.rv)
        .map(|(&h, &r)| {
            let scale = match formula {
                AFormula::ExpH => h.exp(),
                AFormula::Literal => h,
            };
            ((r - scale) / scale).powi(2)
        })
        .sum();
    Ok(sum / n)
}

/// Gradients `∂Ĥ_i/∂θ^g`, one row per day.
pub fn h_gradients(theta: &GarchParams, rv: &[f64], policy: InitPolicy) -> Result<Vec<[f64; 3]>> {
    grads_from_prepared(theta, &prepare(rv, 1)?, policy)
}

fn grads_from_prepared(theta: &GarchParams, p: &Prepared, policy: InitPolicy) -> Result<Vec<[f64; 3]>> {
    let [w, g, b] = theta.to_array();
    let h = model_core::h_recursion(theta, &p.log_rv, policy)?.values;
    let mut d = match policy {
        InitPolicy::FirstLogRv => [0.0; 3],
        InitPolicy::LongRunMean => {
            let den = 1.0 - g - b;
            [1.0 / den, w / (den * den), w / (den * den)]
        }
    };
    let mut out = Vec::with_capacity(h.len());
    out.push(d);
    for i in 1..h.len() {
        d = [1.0 + g * d[0], h[i - 1] + g * d[1], p.log_rv[i - 1] + g * d[2]];
        out.push(d);
    }
    Ok(out)
}

/// `V̂ = (1/n) Σ ∂Ĥ_i ∂Ĥ_iᵀ`.
pub fn estimate_v(theta: &GarchParams, rv: &[f64], policy: InitPolicy) -> Result<[[f64; 3]; 3]> {
    v_from_prepared(theta, &prepare(rv, 1)?, policy)
}

fn v_from_prepared(theta: &GarchParams, p: &Prepared, policy: InitPolicy) -> Result<[[f64; 3]; 3]> {
    let grads = grads_from_prepared(theta, p, policy)?;
    let mut v = [[0.0; 3]; 3];
    for gr in &grads {
        for r in 0..3 {
            for c in 0..3 {
                v[r][c] += gr[r] * gr[c];
            }
        }
    }
    let n = grads.len() as f64;
    for row in v.iter_mut() {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    Ok(v)
}

fn to_matrix(v: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| v[r][c])
}

/// Inverse of `V̂` via its eigen-decomposition, or `None` when singular.
pub fn invert_v(v: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let m = to_matrix(v);
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &e| a.min(e));
    if !(max > 0.0) || min <= SINGULAR_RCOND * max {
        return None;
    }
    let inv_diag = Matrix3::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e));
    let inv = eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Some(std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)])))
}

/// Eigenvalues of `V̂` in ascending order.
pub fn v_eigenvalues(v: &[[f64; 3]; 3]) -> [f64; 3] {
    let eig = SymmetricEigen::new(to_matrix(v));
    let mut e: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    [e[0], e[1], e[2]]
}

/// `sqrt(Â (V̂⁻¹)_ii / n)`; NaN with the flag set when `V̂` is singular.
pub fn standard_errors(a_hat: f64, v_hat: &[[f64; 3]; 3], n: usize) -> ([f64; 3], bool) {
    match invert_v(v_hat) {
        Some(inv) => (std::array::from_fn(|i| (a_hat * inv[i][i] / n as f64).sqrt()), false),
        None => ([f64::NAN; 3], true),
    }
}

/// `T_i = √n (θ̂_i − θ_{0,i}) / √(Â (V̂⁻¹)_ii)` with two-sided p-values.
pub fn z_statistics(fit: &FitResult, theta_null: &GarchParams) -> [ZStat; 3] {
    let est = fit.theta_hat.to_array();
    let null = theta_null.to_array();
    std::array::from_fn(|i| {
        let se = fit.std_errors[i];
        if fit.singular_v || !se.is_finite() {
            return ZStat { z: f64::NAN, p_value: f64::NAN };
        }
        let diff = est[i] - null[i];
        // Exact zero for a null at the estimate, even when se is 0.
        let z = if diff == 0.0 { 0.0 } else { diff / se };
        ZStat { z, p_value: stats::two_sided_p(z) }
    })
}

/// Central finite-difference gradient of `L̂` at `theta`.
pub fn finite_difference_score(theta: &GarchParams, rv: &[f64], policy: InitPolicy, step: f64) -> Result<[f64; 3]> {
    let p = prepare(rv, 1)?;
    let base = theta.to_array();
    let mut scratch = Vec::new();
    let mut out = [0.0; 3];
    for i in 0..3 {
        let mut up = base;
        let mut dn = base;
        up[i] += step;
        dn[i] -= step;
        let lu = model_core::quasi_likelihood_raw(up, &p.rv, &p.log_rv, policy, &mut scratch)?;
        let ld = model_core::quasi_likelihood_raw(dn, &p.rv, &p.log_rv, policy, &mut scratch)?;
        out[i] = (lu - ld) / (2.0 * step);
    }
    Ok(out)
}

/// Analytic gradient `∂L̂/∂θ^g = −(1/n) Σ (1 − RV_i e^{−Ĥ_i}) ∂Ĥ_i`.
pub fn score(theta: &GarchParams, rv: &[f64], policy: InitPolicy) -> Result<[f64; 3]> {
    let p = prepare(rv, 1)?;
    let h = model_core::h_recursion(theta, &p.log_rv, policy)?.values;
    let grads = grads_from_prepared(theta, &p, policy)?;
    let mut s = Vector3::zeros();
    for ((hi, r), g) in h.iter().zip(&p.rv).zip(&grads) {
        s += Vector3::from(*g) * (1.0 - r * (-hi).exp());
    }
    s /= -(p.rv.len() as f64);
    Ok([s[0], s[1], s[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_transform_round_trips() {
        let b = OptimizerConfig::default().bounds();
        let x = [0.3207, 0.3, 0.4405];
        let back = to_box(&from_box(x, &b), &b);
        for i in 0..3 {
            assert_relative_eq!(back[i], x[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig { gamma_bounds: (-0.5, 1.0), ..OptimizerConfig::default() };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig { omega_bounds: (f64::NEG_INFINITY, 1.0), ..OptimizerConfig::default() };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig { multistart_count: 0, ..OptimizerConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn a_hat_examples() {
        // With rv_i = exp(Ĥ_i) the recursion is Ĥ_i = ω + (γ + β)Ĥ_{i−1}.
        let theta = GarchParams::new(0.1, 0.2, 0.3).unwrap();
        let mut h = model_core::long_run_mean(&theta).unwrap() + 0.4;
        let mut rv = Vec::new();
        for _ in 0..6 {
            rv.push(h.exp());
            h = 0.1 + 0.5 * h;
        }
        assert!(estimate_a_with(&theta, &rv, InitPolicy::FirstLogRv, AFormula::ExpH).unwrap() < 1e-28);

        // γ = β = 0 fixes Ĥ_i = ω after the first day, so rv = 2 exp(ω)
        // gives five residuals of 1 and a zero on the initialised day.
        let flat = GarchParams::new(0.7, 0.0, 0.0).unwrap();
        let rv2 = vec![2.0 * 0.7_f64.exp(); 6];
        assert_relative_eq!(estimate_a(&flat, &rv2).unwrap(), 5.0 / 6.0, epsilon = 1e-14);
        let lrm = estimate_a_with(&flat, &rv2, InitPolicy::LongRunMean, AFormula::ExpH).unwrap();
        assert_relative_eq!(lrm, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gamma_zero_gradient_collapses() {
        let theta = GarchParams::new(0.2, 0.0, 0.0).unwrap();
        let rv = [1.0, 2.0, 0.5, 3.0];
        let g = h_gradients(&theta, &rv, InitPolicy::FirstLogRv).unwrap();
        assert_eq!(g[0], [0.0; 3]);
        for i in 1..rv.len() {
            assert_eq!(g[i][0], 1.0);
            assert_relative_eq!(g[i][2], rv[i - 1].ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn singular_v_for_constant_series() {
        let theta = GarchParams::new(0.0, 0.5, 0.2).unwrap();
        let rv = vec![2.0; 50];
        let v = estimate_v(&theta, &rv, InitPolicy::FirstLogRv).unwrap();
        assert!(invert_v(&v).is_none());
        let (se, singular) = standard_errors(0.1, &v, 50);
        assert!(singular && se.iter().all(|s| s.is_nan()));
    }

    #[test]
    fn z_at_estimate_is_zero() {
        let fit = FitResult {
            theta_hat: GarchParams::new(0.3, 0.3, 0.4).unwrap(),
            objective: 0.0,
            converged: true,
            iterations: 1,
            a_hat: 0.2,
            v_hat: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            std_errors: [0.1, 0.1, 0.1],
            singular_v: false,
            n_days: 100,
            init_policy: InitPolicy::FirstLogRv,
            floored: 0,
        };
        for z in z_statistics(&fit, &fit.theta_hat) {
            assert_eq!((z.z, z.p_value), (0.0, 1.0));
        }
        let singular = FitResult { singular_v: true, std_errors: [f64::NAN; 3], ..fit };
        assert!(z_statistics(&singular, &fit.theta_hat).iter().all(|z| z.z.is_nan()));
    }
}
