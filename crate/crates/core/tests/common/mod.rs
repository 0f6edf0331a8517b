#![allow(dead_code)]

use ergi_core::model_core::StructuralParams;
use ergi_core::simulator::{simulate_observations, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `∂L̂/∂θ` up to the factor `−1/n`, from a hand-written recursion.
pub fn oracle_score(theta: [f64; 3], rv: &[f64]) -> [f64; 3] {
    let [w, g, b] = theta;
    let mut h = rv[0].ln();
    let mut grad = [0.0; 3];
    let mut s = [0.0; 3];
    for &r in rv {
        let resid = 1.0 - r * (-h).exp();
        for j in 0..3 {
            s[j] += resid * grad[j];
        }
        grad = [1.0 + g * grad[0], h + g * grad[1], r.ln() + g * grad[2]];
        h = w + g * h + b * r.ln();
    }
    s
}

/// Series following the recursion at `theta` (started at `Ĥ₁ = log RV₁`)
/// with multipliers `M_i = M̃_i + c·∂Ĥ_i`, where `M̃_i` are mean-one
/// log-normal draws and `c` is solved so the score at `theta` vanishes.
pub fn critical_series(theta: [f64; 3], n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..n)
        .map(|_| (sd * rng.sample::<f64, _>(StandardNormal) - 0.5 * sd * sd).exp())
        .collect();
    let [w, g, b] = theta;
    let build = |c: [f64; 3]| {
        let mut rv = vec![base[0]];
        let mut h = base[0].ln();
        let mut grad = [0.0; 3];
        for &mt in &base[1..] {
            let prev = rv.last().copied().unwrap_or(1.0_f64).ln();
            grad = [1.0 + g * grad[0], h + g * grad[1], prev + g * grad[2]];
            h = w + g * h + b * prev;
            let m = mt + c[0] * grad[0] + c[1] * grad[1] + c[2] * grad[2];
            assert!(m > 0.0, "multiplier turned negative");
            rv.push(h.exp() * m);
        }
        rv
    };
    let mut c = [0.0; 3];
    for _ in 0..20 {
        let s = oracle_score(theta, &build(c));
        if s.iter().all(|v| v.abs() < 1e-11) {
            break;
        }
        let mut jac = [[0.0; 3]; 3];
        for k in 0..3 {
            let mut cc = c;
            cc[k] += 1e-6;
            let sp = oracle_score(theta, &build(cc));
            for r in 0..3 {
                jac[r][k] = (sp[r] - s[r]) / 1e-6;
            }
        }
        let step = solve3(jac, s);
        for k in 0..3 {
            c[k] -= step[k];
        }
    }
    let rv = build(c);
    let s = oracle_score(theta, &rv);
    assert!(s.iter().all(|v| v.abs() < 1e-10), "could not zero the score: {s:?}");
    rv
}

pub fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    std::array::from_fn(|c| {
        let mut ac = a;
        for r in 0..3 {
            ac[r][c] = b[r];
        }
        det(ac) / d
    })
}

pub fn max_abs_diff(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// True integrated variances of a simulated path on a coarse grid.
pub fn oracle_iv(theta: &StructuralParams, n: usize, seed: u64) -> Vec<f64> {
    let cfg = SimConfig { n_days: n, grid_steps_per_day: 1_170, obs_per_day: 2, seed, ..SimConfig::default() };
    simulate_observations(theta, &cfg).unwrap().true_iv()
}
