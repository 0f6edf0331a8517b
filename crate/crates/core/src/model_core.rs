//! Parameter types and closed-form algebra of the ERGI model.
//!
//! The continuous-time model is indexed by [`StructuralParams`]
//! `(ω, γ, β, β*, ν)`. Its daily integrated variances follow an exponential
//! realized-GARCH recursion whose coefficients [`GarchParams`]
//! `(ω^g, γ, β^g)` are obtained through the ϱ-coefficients of
//! [`rho_coefficients`]. This module also hosts the log conditional variance
//! recursion `Ĥ_i` and the Gaussian quasi-likelihood used for estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|β|` the ϱ-coefficients are evaluated from their Taylor
/// series rather than the closed forms. Even with `exp_m1` the closed form
/// of `ϱ₃` is off by about 1e-9 at `β = 2e-4` and by 1e-7 at `β = 1e-5`, so
/// the switch sits where the closed form is good to 1e-12.
pub const RHO_SERIES_THRESHOLD: f64 = 0.1;

/// RV values at or below zero are replaced by this before taking logs.
pub const RV_FLOOR: f64 = 1e-12;

/// `|Ĥ_i|` beyond this makes `exp(-Ĥ_i)` leave double range; the
/// likelihood then reports `-∞`.
pub const H_OVERFLOW: f64 = 700.0;

/// Structural parameter vector of the ERGI diffusion.
///
/// `beta_star` is not free: it is derived from `beta` on construction so
/// the two can never disagree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStructural", into = "RawStructural")]
pub struct StructuralParams {
    omega: f64,
    gamma: f64,
    beta: f64,
    nu: f64,
    beta_star: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStructural {
    omega: f64,
    gamma: f64,
    beta: f64,
    nu: f64,
}

impl TryFrom<RawStructural> for StructuralParams {
    type Error = Error;
    fn try_from(r: RawStructural) -> Result<Self> {
        StructuralParams::new(r.omega, r.gamma, r.beta, r.nu)
    }
}

impl From<StructuralParams> for RawStructural {
    fn from(p: StructuralParams) -> Self {
        RawStructural { omega: p.omega, gamma: p.gamma, beta: p.beta, nu: p.nu }
    }
}

impl StructuralParams {
    pub fn new(omega: f64, gamma: f64, beta: f64, nu: f64) -> Result<Self> {
        if ![omega, gamma, beta, nu].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("structural parameters must be finite".into()));
        }
        let beta_star = beta_star(beta)?;
        Ok(Self { omega, gamma, beta, nu, beta_star })
    }

    /// The configuration used in the reference Monte-Carlo design:
    /// `(ω, γ, β, ν) = (-0.1, 0.3, 0.5, 2)`.
    pub fn reference() -> Self {
        Self::new(-0.1, 0.3, 0.5, 2.0).expect("reference parameters are valid")
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn beta_star(&self) -> f64 {
        self.beta_star
    }

    pub fn rho(&self) -> RhoCoefficients {
        rho_coefficients(self.beta, self.gamma).expect("|beta| < 1 checked on construction")
    }
}

/// `ϱ₁ = (e^β−1)/β`, `ϱ₂ = (e^β−1−β)/β²`, `ϱ₃ = (e^β−1−β−β²/2)/β³` and
/// `ϱ = ϱ₁ + (γ−1)ϱ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoCoefficients {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub rho: f64,
}

pub fn rho_coefficients(beta: f64, gamma: f64) -> Result<RhoCoefficients> {
    check_beta(beta)?;
    let (rho1, rho2, rho3) = if beta.abs() < RHO_SERIES_THRESHOLD {
        rho_series(beta)
    } else {
        rho_closed_form(beta)
    };
    Ok(RhoCoefficients { rho1, rho2, rho3, rho: rho1 + (gamma - 1.0) * rho2 })
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta.abs() >= 1.0 {
        return Err(Error::Domain(format!("|beta| must be < 1, got {beta}")));
    }
    Ok(())
}

pub(crate) fn rho_closed_form(beta: f64) -> (f64, f64, f64) {
    let em1 = beta.exp_m1();
    let r1 = em1 / beta;
    let r2 = (em1 - beta) / (beta * beta);
    let r3 = (em1 - beta - 0.5 * beta * beta) / (beta * beta * beta);
    (r1, r2, r3)
}

/// Taylor expansions `ϱ_j = Σ_k β^k / (k+j)!`, summed until the terms drop
/// below double precision. For `|β| < 0.1` that takes at most 14 terms.
pub(crate) fn rho_series(beta: f64) -> (f64, f64, f64) {
    let series = |offset: u32| -> f64 {
        let mut term = 1.0 / factorial(offset);
        let mut acc = 0.0;
        for k in 0..30u32 {
            acc += term;
            if term.abs() < 1e-18 * acc.abs() {
                break;
            }
            term *= beta / f64::from(k + offset + 1);
        }
        acc
    };
    (series(1), series(2), series(3))
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `β* = (1 + βϱ₂) / (ϱ₂ − 2ϱ₃)`.
pub fn beta_star(beta: f64) -> Result<f64> {
    let rho = rho_coefficients(beta, 1.0)?;
    let den = rho.rho2 - 2.0 * rho.rho3;
    if den.abs() < 1e-14 {
        return Err(Error::Domain(format!("beta* denominator vanishes at beta = {beta}")));
    }
    Ok((1.0 + beta * rho.rho2) / den)
}

/// `ω* = {(1−γ)ϱ₂ + ϱ}ω + (1−γ)ν(ϱ₂ − 2ϱ₃)`, the intercept of the
/// log-integrated-variance recursion `h_n`.
pub fn omega_star(theta: &StructuralParams) -> f64 {
    let r = theta.rho();
    let g1 = 1.0 - theta.gamma;
    (g1 * r.rho2 + r.rho) * theta.omega + g1 * theta.nu * (r.rho2 - 2.0 * r.rho3)
}

/// Intercept `c` in `h_n = c + ϱ b_{n−1}`: `ωϱ₂ + ν(ϱ₂ − 2ϱ₃)`.
pub fn h_intercept(theta: &StructuralParams) -> f64 {
    let r = theta.rho();
    theta.omega * r.rho2 + theta.nu * (r.rho2 - 2.0 * r.rho3)
}

/// Maps structural parameters to the estimable GARCH parameters given
/// `log E[exp(D_n)]`.
pub fn structural_to_garch(theta: &StructuralParams, log_mgf_d: f64) -> Result<GarchParams> {
    if !log_mgf_d.is_finite() {
        return Err(Error::Domain("log E[exp(D)] must be finite".into()));
    }
    let r = theta.rho();
    let omega_g = omega_star(theta) + (1.0 - theta.gamma) * log_mgf_d;
    let beta_g = r.rho * theta.beta;
    GarchParams::new(omega_g, theta.gamma, beta_g).map_err(|e| match e {
        Error::Domain(msg) => Error::Domain(format!("non-stationary structural configuration: {msg}")),
        other => other,
    })
}

/// Kernel of the martingale difference,
/// `D_n = 2ν ∫ k(n−t) Z_t dW_t` with `k(τ) = τe^{βτ}/β − (e^{βτ}−1)/β²`.
///
/// Evaluated as `τ² Σ_j j (βτ)^{j−1}/(j+1)!`, which is accurate for every
/// `|βτ| < 1` and has no singularity at `β = 0`.
pub fn d_kernel(beta: f64, tau: f64) -> f64 {
    let x = beta * tau;
    let mut coef = 0.5; // j = 1: 1/2!
    let mut pow = 1.0;
    let mut acc = 0.0;
    for j in 1..40u32 {
        let term = f64::from(j) * coef * pow;
        acc += term;
        if term.abs() < 1e-18 * acc.abs() {
            break;
        }
        coef /= f64::from(j + 2);
        pow *= x;
    }
    tau * tau * acc
}

/// `log E[exp(D_n)]` computed without simulation.
///
/// Itô's formula turns `D_n` into the quadratic Brownian functional
/// `ν ∫₀¹ (1−s)e^{β(1−s)} W_s² ds − ν ∫₀¹ k(τ) dτ`. Its exponential moment
/// follows from the Cameron–Martin formula: with `u'' = −2q(s)u`,
/// `u(1) = 1`, `u'(1) = 0`, `E exp(∫ q W²) = u(0)^{−1/2}` as long as `u`
/// stays positive. The ODE is integrated backwards with classical RK4.
///
/// Returns a domain error when the moment is infinite.
pub fn log_mgf_d_riccati(theta: &StructuralParams) -> Result<f64> {
    log_mgf_scaled_d(theta, 1.0)
}

/// `log E[exp(λ D_n)]` by the same route as [`log_mgf_d_riccati`].
pub fn log_mgf_scaled_d(theta: &StructuralParams, lambda: f64) -> Result<f64> {
    const STEPS: usize = 20_000;
    let beta = theta.beta;
    let weight = lambda * theta.nu;
    if weight == 0.0 {
        return Ok(0.0);
    }
    // q as a function of τ = 1 − s.
    let q = |tau: f64| weight * tau * (beta * tau).exp();
    let h = 1.0 / STEPS as f64;
    let (mut u, mut du) = (1.0_f64, 0.0_f64);
    let rhs = |tau: f64, u: f64| -2.0 * q(tau) * u;
    for i in 0..STEPS {
        let t = i as f64 * h;
        let k1u = du;
        let k1v = rhs(t, u);
        let k2u = du + 0.5 * h * k1v;
        let k2v = rhs(t + 0.5 * h, u + 0.5 * h * k1u);
        let k3u = du + 0.5 * h * k2v;
        let k3v = rhs(t + 0.5 * h, u + 0.5 * h * k2u);
        let k4u = du + h * k3v;
        let k4v = rhs(t + h, u + h * k3u);
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        du += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if u <= 0.0 {
            return Err(Error::Domain(format!(
                "E[exp({lambda} D)] is infinite for these structural parameters"
            )));
        }
    }
    // Simpson's rule for ∫₀¹ k(τ) dτ.
    let kernel_integral = {
        let n = 2_000;
        let hk = 1.0 / n as f64;
        let mut s = d_kernel(beta, 0.0) + d_kernel(beta, 1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * d_kernel(beta, i as f64 * hk);
        }
        s * hk / 3.0
    };
    Ok(-0.5 * u.ln() - weight * kernel_integral)
}

/// Estimable GARCH parameter vector `θ^g = (ω^g, γ, β^g)`.
///
/// Construction enforces the stationary region `|γ| < 1`, `|β^g| < 1`,
/// `|γ + β^g| < 1`; signs are unrestricted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGarch", into = "RawGarch")]
pub struct GarchParams {
    omega_g: f64,
    gamma: f64,
    beta_g: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGarch {
    omega_g: f64,
    gamma: f64,
    beta_g: f64,
}

impl TryFrom<RawGarch> for GarchParams {
    type Error = Error;
    fn try_from(r: RawGarch) -> Result<Self> {
        GarchParams::new(r.omega_g, r.gamma, r.beta_g)
    }
}

impl From<GarchParams> for RawGarch {
    fn from(p: GarchParams) -> Self {
        RawGarch { omega_g: p.omega_g, gamma: p.gamma, beta_g: p.beta_g }
    }
}

impl GarchParams {
    pub fn new(omega_g: f64, gamma: f64, beta_g: f64) -> Result<Self> {
        if ![omega_g, gamma, beta_g].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("GARCH parameters must be finite".into()));
        }
        if gamma.abs() >= 1.0 || beta_g.abs() >= 1.0 || (gamma + beta_g).abs() >= 1.0 {
            return Err(Error::Domain(format!(
                "(gamma, beta_g) = ({gamma}, {beta_g}) violates |gamma| < 1, |beta_g| < 1, |gamma + beta_g| < 1"
            )));
        }
        Ok(Self { omega_g, gamma, beta_g })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn omega_g(&self) -> f64 {
        self.omega_g
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn beta_g(&self) -> f64 {
        self.beta_g
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.omega_g, self.gamma, self.beta_g]
    }
}

/// How `Ĥ₁` is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// `Ĥ₁ = log RV₁`.
    #[default]
    FirstLogRv,
    /// `Ĥ₁ = ω^g / (1 − γ − β^g)`.
    LongRunMean,
}

/// Path of `Ĥ_i`, one value per input day.
#[derive(Debug, Clone, PartialEq)]
pub struct HPath {
    pub values: Vec<f64>,
    pub init_policy: InitPolicy,
}

/// `ω^g / (1 − γ − β^g)`.
pub fn long_run_mean(params: &GarchParams) -> Result<f64> {
    long_run_mean_raw(params.to_array())
}

pub(crate) fn long_run_mean_raw(theta: [f64; 3]) -> Result<f64> {
    let den = 1.0 - theta[1] - theta[2];
    if den.abs() < 1e-12 {
        return Err(Error::Domain("1 - gamma - beta_g vanishes".into()));
    }
    Ok(theta[0] / den)
}

pub fn h_recursion(params: &GarchParams, log_rv: &[f64], policy: InitPolicy) -> Result<HPath> {
    let mut values = Vec::with_capacity(log_rv.len() + 1);
    h_path_raw(params.to_array(), log_rv, policy, &mut values)?;
    values.truncate(log_rv.len());
    Ok(HPath { values, init_policy: policy })
}

/// Fills `out` with `Ĥ_1, …, Ĥ_{n+1}`; the extra last entry is the one-step
/// forecast that uses `log RV_n`.
pub(crate) fn h_path_raw(
    theta: [f64; 3],
    log_rv: &[f64],
    policy: InitPolicy,
    out: &mut Vec<f64>,
) -> Result<()> {
    if log_rv.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if log_rv.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("log RV contains non-finite values".into()));
    }
    let [omega, gamma, beta] = theta;
    out.clear();
    let mut h = match policy {
        InitPolicy::FirstLogRv => log_rv[0],
        InitPolicy::LongRunMean => long_run_mean_raw(theta)?,
    };
    out.push(h);
    for &l in log_rv {
        h = omega + gamma * h + beta * l;
        out.push(h);
    }
    Ok(())
}

/// Result of flooring an RV series at [`RV_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlooredRv {
    pub values: Vec<f64>,
    pub floored: usize,
}

pub fn floor_rv(rv: &[f64]) -> FlooredRv {
    let mut floored = 0;
    let values = rv
        .iter()
        .map(|&v| {
            if v > RV_FLOOR {
                v
            } else {
                floored += 1;
                RV_FLOOR
            }
        })
        .collect();
    FlooredRv { values, floored }
}

/// `L̂ = −(1/n) Σ {Ĥ_i + RV_i exp(−Ĥ_i)}`.
///
/// Returns `−∞` when some `|Ĥ_i|` exceeds [`H_OVERFLOW`].
pub fn quasi_likelihood(params: &GarchParams, rv: &[f64], policy: InitPolicy) -> Result<f64> {
    if rv.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("RV values must be positive and finite".into()));
    }
    let log_rv: Vec<f64> = rv.iter().map(|v| v.ln()).collect();
    let mut scratch = Vec::with_capacity(rv.len() + 1);
    quasi_likelihood_raw(params.to_array(), rv, &log_rv, policy, &mut scratch)
}

pub(crate) fn quasi_likelihood_raw(
    theta: [f64; 3],
    rv: &[f64],
    log_rv: &[f64],
    policy: InitPolicy,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    h_path_raw(theta, log_rv, policy, scratch)?;
    let mut acc = 0.0;
    for (h, r) in scratch.iter().zip(rv) {
        if h.abs() > H_OVERFLOW {
            return Ok(f64::NEG_INFINITY);
        }
        acc += h + r * (-h).exp();
    }
    Ok(-acc / rv.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Reference values evaluated with 30-digit arithmetic (mpmath).
    const RHO1: f64 = 1.297_442_541_400_256_3;
    const RHO2: f64 = 0.594_885_082_800_512_6;
    const RHO3: f64 = 0.189_770_165_601_025_17;
    const RHO: f64 = 0.881_022_983_439_897_5;
    const BETA_STAR: f64 = 6.024_955_480_779_505_8;
    const OMEGA_STAR: f64 = 0.171_738_398_097_821_5;

    #[test]
    fn rho_at_reference_beta() {
        let r = rho_coefficients(0.5, 0.3).unwrap();
        assert_relative_eq!(r.rho1, RHO1, epsilon = 1e-14);
        assert_relative_eq!(r.rho2, RHO2, epsilon = 1e-14);
        assert_relative_eq!(r.rho3, RHO3, epsilon = 1e-14);
        assert_relative_eq!(r.rho, RHO, epsilon = 1e-14);
        assert_eq!(format!("{:.4}", r.rho * 0.5), "0.4405");
    }

    #[test]
    fn rho_limits_at_zero() {
        let r = rho_coefficients(0.0, 0.7).unwrap();
        assert_eq!((r.rho1, r.rho2), (1.0, 0.5));
        assert_relative_eq!(r.rho3, 1.0 / 6.0, epsilon = 1e-16);
        assert_relative_eq!(r.rho, 1.0 - 0.3 * 0.5, epsilon = 1e-16);
    }

    #[test]
    fn rho_rejects_beta_outside_unit_interval() {
        assert!(matches!(rho_coefficients(1.0, 0.3), Err(Error::Domain(_))));
        assert!(matches!(rho_coefficients(-1.2, 0.3), Err(Error::Domain(_))));
        assert!(rho_coefficients(f64::NAN, 0.3).is_err());
    }

    #[test]
    fn rho_branches_agree_around_threshold() {
        for &b in &[0.1, -0.1, 0.2, -0.2, 0.100_001, -0.099_999] {
            let s = rho_series(b);
            let c = rho_closed_form(b);
            assert!((s.0 - c.0).abs() < 1e-12, "rho1 at {b}");
            assert!((s.1 - c.1).abs() < 1e-12, "rho2 at {b}");
            assert!((s.2 - c.2).abs() < 1e-11, "rho3 at {b}");
        }
    }

    #[test]
    fn closed_form_rho3_cancels_for_small_beta() {
        // Why the series branch extends to 0.1.
        for b in [2e-4, 1e-5] {
            let exact = 1.0 / 6.0 + b / 24.0 + b * b / 120.0;
            assert!((rho_closed_form(b).2 - exact).abs() > 1e-10);
            assert!((rho_series(b).2 - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn rho_small_beta_matches_taylor_oracle() {
        // Three Taylor terms; the truncation error is below 1e-11 for |β| ≤ 1e-3.
        for &b in &[1e-3, -1e-3, 1e-5, -1e-5, 1e-7, -1e-7] {
            let r = rho_coefficients(b, 0.3).unwrap();
            assert!((r.rho1 - (1.0 + b / 2.0 + b * b / 6.0)).abs() < 1e-10);
            assert!((r.rho2 - (0.5 + b / 6.0 + b * b / 24.0)).abs() < 1e-10);
            assert!((r.rho3 - (1.0 / 6.0 + b / 24.0 + b * b / 120.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn beta_star_values() {
        assert_relative_eq!(beta_star(0.5).unwrap(), BETA_STAR, epsilon = 1e-12);
        // 6.02495…: four decimals by truncation.
        assert_eq!((beta_star(0.5).unwrap() * 1e4).floor() / 1e4, 6.0249);
        assert_relative_eq!(beta_star(0.0).unwrap(), 6.0, epsilon = 1e-14);
        assert_relative_eq!(beta_star(1e-6).unwrap(), 6.0, epsilon = 1e-6);
        // β* happens to be even in β.
        assert_relative_eq!(beta_star(-0.5).unwrap(), BETA_STAR, epsilon = 1e-12);
        assert!(beta_star(1.5).is_err());
    }

    #[test]
    fn structural_params_store_consistent_beta_star() {
        let theta = StructuralParams::reference();
        let r = theta.rho();
        let direct = (1.0 + theta.beta() * r.rho2) / (r.rho2 - 2.0 * r.rho3);
        assert!((theta.beta_star() - direct).abs() < 1e-12);
        assert!(StructuralParams::new(0.0, 0.3, 1.0, 1.0).is_err());
    }

    #[test]
    fn omega_star_reference() {
        assert_relative_eq!(omega_star(&StructuralParams::reference()), OMEGA_STAR, epsilon = 1e-13);
    }

    #[test]
    fn mapping_with_zero_intercept() {
        let theta = StructuralParams::new(0.0, 0.4, 0.3, 0.0).unwrap();
        let g = structural_to_garch(&theta, 0.0).unwrap();
        assert_eq!(g.omega_g(), 0.0);
        assert_eq!(g.beta_g(), theta.rho().rho * 0.3);
        assert_eq!(log_mgf_d_riccati(&theta).unwrap(), 0.0);
    }

    #[test]
    fn mapping_beta_g_follows_rho_exactly() {
        let theta = StructuralParams::reference();
        let g = structural_to_garch(&theta, 0.2).unwrap();
        assert_eq!(g.beta_g(), theta.rho().rho * theta.beta());
        assert_eq!(g.gamma(), 0.3);
        assert_relative_eq!(g.omega_g(), OMEGA_STAR + 0.7 * 0.2, epsilon = 1e-13);
    }

    #[test]
    fn mapping_rejects_non_stationary_configuration() {
        // γ = 0.9 with β = 0.9: γ + ϱβ > 1.
        let theta = StructuralParams::new(0.0, 0.9, 0.9, 0.0).unwrap();
        assert!(matches!(structural_to_garch(&theta, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn d_kernel_matches_closed_form() {
        for &(b, t) in &[(0.5_f64, 1.0_f64), (0.5, 0.3), (-0.7, 0.8), (0.9, 0.05)] {
            let closed: f64 = t * (b * t).exp() / b - (b * t).exp_m1() / (b * b);
            assert_relative_eq!(d_kernel(b, t), closed, max_relative = 1e-9);
        }
        assert_relative_eq!(d_kernel(0.0, 0.6), 0.18, epsilon = 1e-16);
    }

    #[test]
    fn riccati_mgf_reference_value() {
        // Cameron–Martin value cross-checked with a 30-digit ODE solve.
        let v = log_mgf_d_riccati(&StructuralParams::reference()).unwrap();
        assert_relative_eq!(v, 0.203_853_603_022_948_4, epsilon = 1e-9);
        // E[exp(2D)] is infinite at the reference point.
        assert!(log_mgf_scaled_d(&StructuralParams::reference(), 2.0).is_err());
    }

    #[test]
    fn riccati_small_nu_matches_gaussian_limit() {
        // For small ν, D is nearly Gaussian with variance
        // 4ν² ∫ k(τ)² (1−τ) dτ (Itô isometry), so log E e^D ≈ Var/2.
        let theta = StructuralParams::new(0.0, 0.3, 0.5, 0.01).unwrap();
        let n = 20_000;
        let var: f64 = (0..n)
            .map(|i| {
                let tau = (i as f64 + 0.5) / n as f64;
                4.0 * 1e-4 * d_kernel(0.5, tau).powi(2) * (1.0 - tau)
            })
            .sum::<f64>()
            / n as f64;
        let v = log_mgf_d_riccati(&theta).unwrap();
        assert_relative_eq!(v, 0.5 * var, max_relative = 2e-2);
    }

    #[test]
    fn garch_params_gate() {
        assert!(GarchParams::new(0.1, 0.5, 0.5).is_err());
        assert!(GarchParams::new(0.1, -0.5, -0.5).is_err());
        assert!(GarchParams::new(0.1, 1.0, -0.5).is_err());
        assert!(GarchParams::new(0.1, 0.9, -0.95).is_ok());
        assert!(GarchParams::new(f64::NAN, 0.1, 0.1).is_err());
    }

    #[test]
    fn long_run_mean_values() {
        let p = GarchParams::new(0.3207, 0.3, 0.4405).unwrap();
        assert_relative_eq!(long_run_mean(&p).unwrap(), 0.3207 / 0.2595, epsilon = 1e-12);
        assert_eq!(format!("{:.5}", long_run_mean(&p).unwrap()), "1.23584");
        assert_eq!(long_run_mean(&GarchParams::new(0.0, 0.2, 0.3).unwrap()).unwrap(), 0.0);
        assert_eq!(long_run_mean(&GarchParams::new(0.5, 0.0, 0.0).unwrap()).unwrap(), 0.5);
        assert!(long_run_mean_raw([1.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn h_recursion_examples() {
        let zero = GarchParams::new(0.0, 0.0, 0.0).unwrap();
        let h = h_recursion(&zero, &[0.3, -1.0, 2.0], InitPolicy::LongRunMean).unwrap();
        assert_eq!(h.values, vec![0.0, 0.0, 0.0]);

        let p = GarchParams::new(0.3207, 0.3, 0.4405).unwrap();
        let h = h_recursion(&p, &[0.0, 0.0, 0.0], InitPolicy::FirstLogRv).unwrap();
        assert_eq!(h.values.len(), 3);
        assert_relative_eq!(h.values[0], 0.0);
        assert_relative_eq!(h.values[1], 0.3207, epsilon = 1e-15);
        assert_relative_eq!(h.values[2], 0.3207 + 0.3 * 0.3207, epsilon = 1e-15);
        assert_eq!(format!("{:.5}", h.values[2]), "0.41691");

        let h = h_recursion(&p, &[1.0, 2.0], InitPolicy::LongRunMean).unwrap();
        assert_relative_eq!(h.values[0], 0.3207 / 0.2595, epsilon = 1e-14);

        let memoryless = GarchParams::new(0.2, 0.0, 0.6).unwrap();
        let lr = [0.5, -0.25, 1.5, 0.0];
        let h = h_recursion(&memoryless, &lr, InitPolicy::FirstLogRv).unwrap();
        for i in 1..lr.len() {
            assert_relative_eq!(h.values[i], 0.2 + 0.6 * lr[i - 1], epsilon = 1e-15);
        }
        assert!(h_recursion(&p, &[], InitPolicy::FirstLogRv).is_err());
    }

    #[test]
    fn quasi_likelihood_examples() {
        let e = std::f64::consts::E;
        let p = GarchParams::new(1.0, 0.0, 0.0).unwrap();
        // LongRunMean gives Ĥ₁ = 1 as well; FirstLogRv gives log e = 1.
        for policy in [InitPolicy::FirstLogRv, InitPolicy::LongRunMean] {
            assert_relative_eq!(quasi_likelihood(&p, &[e, e, e], policy).unwrap(), -2.0, epsilon = 1e-15);
        }
        assert!(quasi_likelihood(&p, &[1.0, 0.0], InitPolicy::FirstLogRv).is_err());
    }

    #[test]
    fn quasi_likelihood_overflow_sentinel() {
        let p = GarchParams::new(9.0, 0.99, 0.0).unwrap();
        let rv = vec![1.0; 200];
        assert_eq!(quasi_likelihood(&p, &rv, InitPolicy::FirstLogRv).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn floor_counts_events() {
        let f = floor_rv(&[1.0, 0.0, -2.0, 1e-13, 3.0]);
        assert_eq!(f.floored, 3);
        assert_eq!(f.values, vec![1.0, RV_FLOOR, RV_FLOOR, RV_FLOOR, 3.0]);
    }

    proptest! {
        #[test]
        fn likelihood_bounded_by_perfect_fit(
            rv in prop::collection::vec(0.01f64..50.0, 2..60),
            omega in -3.0f64..3.0, gamma in -0.9f64..0.9, beta in -0.9f64..0.9,
        ) {
            prop_assume!((gamma + beta).abs() < 0.99);
            let p = GarchParams::new(omega, gamma, beta).unwrap();
            let bound = -rv.iter().map(|r| r.ln() + 1.0).sum::<f64>() / rv.len() as f64;
            for policy in [InitPolicy::FirstLogRv, InitPolicy::LongRunMean] {
                let l = quasi_likelihood(&p, &rv, policy).unwrap();
                prop_assert!(l <= bound + 1e-12);
            }
        }

        #[test]
        fn memoryless_recursion_ignores_older_entries(
            mut lr in prop::collection::vec(-3.0f64..3.0, 4..30),
            omega in -1.0f64..1.0, beta in -0.9f64..0.9,
            seed in any::<u64>(),
        ) {
            let p = GarchParams::new(omega, 0.0, beta).unwrap();
            let n = lr.len();
            let last = h_recursion(&p, &lr, InitPolicy::FirstLogRv).unwrap().values[n - 1];
            // Rotate everything before index n-2.
            let k = (seed as usize) % (n - 2);
            lr[1..n - 2].rotate_left(k.min(n - 3));
            let again = h_recursion(&p, &lr, InitPolicy::FirstLogRv).unwrap().values[n - 1];
            prop_assert!((last - again).abs() < 1e-14);
        }
    }
}
