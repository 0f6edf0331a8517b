use ergi_core::estimation::*;
use ergi_core::model_core::{log_mgf_d_riccati, log_mgf_scaled_d, GarchParams, InitPolicy, StructuralParams};
use ergi_core::stats;
use ergi_core::study::Truth;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

mod common;
use common::*;

const THETA0: [f64; 3] = [0.3207, 0.3, 0.4405];

fn theta0() -> GarchParams {
    GarchParams::from_array(THETA0).unwrap()
}

#[test]
fn recovers_parameters_at_an_exact_critical_point() {
    let rv = critical_series(THETA0, 500, 0.3, 1);
    let a = score(&theta0(), &rv, InitPolicy::FirstLogRv).unwrap();
    assert!(a.iter().all(|v| v.abs() < 1e-12), "{a:?}");
    let fit = fit_qmle(&rv, &OptimizerConfig::default()).unwrap();
    assert!(fit.converged);
    let gap = max_abs_diff(fit.theta_hat.to_array(), THETA0);
    assert!(gap < 1e-4, "{:?}", fit.theta_hat);
    let fd = finite_difference_score(&fit.theta_hat, &rv, InitPolicy::FirstLogRv, 1e-6).unwrap();
    assert!(fd.iter().all(|v| v.abs() < 1e-5), "{fd:?}");
}

#[test]
fn perfectly_fitting_series_identifies_only_the_persistence() {
    // rv_i = exp(Ĥ_i(θ₀)) makes Ĥ_{i+1} = ω^g + (γ + β^g) Ĥ_i.
    let mut rv = vec![(-1.0_f64).exp()];
    let mut h = -1.0;
    for _ in 1..500 {
        h = THETA0[0] + (THETA0[1] + THETA0[2]) * h;
        rv.push(h.exp());
    }
    let fit = fit_qmle(&rv, &OptimizerConfig::default()).unwrap();
    let [w, g, b] = fit.theta_hat.to_array();
    assert!((w - THETA0[0]).abs() < 1e-3, "{w}");
    assert!((g + b - THETA0[1] - THETA0[2]).abs() < 1e-3);
    // The perfect-fit bound is attained.
    let bound = -rv.iter().map(|r| r.ln() + 1.0).sum::<f64>() / rv.len() as f64;
    assert!((fit.objective - bound).abs() < 1e-9);
}

fn median_init_gap(n: usize) -> f64 {
    let theta = StructuralParams::reference();
    let gaps: Vec<f64> = (0..16u64)
        .into_par_iter()
        .map(|seed| {
            let iv = oracle_iv(&theta, n, 300 + seed);
            let first = fit_qmle(&iv, &OptimizerConfig::default()).unwrap();
            let lrm = OptimizerConfig { init_policy: InitPolicy::LongRunMean, ..Default::default() };
            let lrm = fit_qmle(&iv, &lrm).unwrap();
            max_abs_diff(first.theta_hat.to_array(), lrm.theta_hat.to_array())
        })
        .collect();
    stats::quantile(&gaps, 0.5)
}

#[test]
fn initial_value_effect_decays_like_one_over_n() {
    let (short, long) = (median_init_gap(500), median_init_gap(4_000));
    assert!(short / long >= 4.0, "{short} vs {long}");
}

#[test]
fn root_n_consistency_with_exact_variances() {
    // At the reference loading E[exp(2D)] is infinite and the rate is
    // slower; ν = 1 keeps the multiplier variance finite.
    let theta = StructuralParams::new(-0.1, 0.3, 0.5, 1.0).unwrap();
    let truth = Truth::new(theta, log_mgf_d_riccati(&theta).unwrap()).unwrap();
    let t0 = truth.theta_g.to_array();
    let ns = [100.0_f64, 200.0, 500.0];
    let rmse: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let sq: Vec<f64> = (0..200u64)
                .into_par_iter()
                .map(|rep| {
                    let iv = oracle_iv(&theta, n as usize, 1_000 + rep);
                    let est = fit_qmle(&iv, &OptimizerConfig::default()).unwrap().theta_hat.to_array();
                    (0..3).map(|j| (est[j] - t0[j]).powi(2)).sum::<f64>()
                })
                .collect();
            stats::mean(&sq).sqrt()
        })
        .collect();
    let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = rmse.iter().map(|r| r.ln()).collect();
    let (mx, my) = (stats::mean(&x), stats::mean(&y));
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}, rmse {rmse:?}");
}

#[test]
fn a_hat_tracks_the_multiplier_variance() {
    // A loading small enough for exp(2D) to have a finite mean.
    let theta = StructuralParams::new(-0.1, 0.3, 0.5, 0.5).unwrap();
    let log_mgf = log_mgf_d_riccati(&theta).unwrap();
    let truth = Truth::new(theta, log_mgf).unwrap();
    let want = (log_mgf_scaled_d(&theta, 2.0).unwrap() - 2.0 * log_mgf).exp() - 1.0;
    let a: Vec<f64> = (0..60u64)
        .into_par_iter()
        .map(|rep| estimate_a(&truth.theta_g, &oracle_iv(&theta, 500, 5_000 + rep)).unwrap())
        .collect();
    let se = stats::sample_sd(&a) / (a.len() as f64).sqrt();
    assert!((stats::mean(&a) - want).abs() < 3.0 * se + 1e-3, "{} vs {want} (se {se})", stats::mean(&a));
}

#[test]
fn analytic_h_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let rv: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0_f64).exp()).collect();
        let theta = [rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
        let g = GarchParams::from_array(theta).unwrap();
        for policy in [InitPolicy::FirstLogRv, InitPolicy::LongRunMean] {
            let grads = h_gradients(&g, &rv, policy).unwrap();
            let log_rv: Vec<f64> = rv.iter().map(|v| v.ln()).collect();
            for j in 0..3 {
                let (mut up, mut dn) = (theta, theta);
                up[j] += 1e-6;
                dn[j] -= 1e-6;
                let hu = ergi_core::model_core::h_recursion(&GarchParams::from_array(up).unwrap(), &log_rv, policy).unwrap();
                let hd = ergi_core::model_core::h_recursion(&GarchParams::from_array(dn).unwrap(), &log_rv, policy).unwrap();
                for i in 0..rv.len() {
                    let fd = (hu.values[i] - hd.values[i]) / 2e-6;
                    let an = grads[i][j];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "day {i} param {j}: {fd} vs {an}");
                }
            }
        }
    }
}

#[test]
fn analytic_score_matches_independent_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rv: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0_f64).exp()).collect();
    let s = score(&theta0(), &rv, InitPolicy::FirstLogRv).unwrap();
    let o = oracle_score(THETA0, &rv);
    for j in 0..3 {
        assert!((s[j] + o[j] / rv.len() as f64).abs() < 1e-12, "{s:?} vs {o:?}");
    }
}

proptest! {
    #[test]
    fn v_hat_is_symmetric_psd(log_rv in prop::collection::vec(-2.0..2.0f64, 30..120),
                              g in -0.6..0.6f64, b in -0.3..0.3f64) {
        let rv: Vec<f64> = log_rv.iter().map(|v| v.exp()).collect();
        let theta = GarchParams::new(0.1, g, b).unwrap();
        let v = estimate_v(&theta, &rv, InitPolicy::FirstLogRv).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                prop_assert_eq!(v[r][c], v[c][r]);
            }
        }
        let scale = v_eigenvalues(&v)[2].max(1.0);
        prop_assert!(v_eigenvalues(&v)[0] >= -1e-12 * scale);
    }
}
