//! Derivative-free Nelder–Mead minimisation.
//!
//! Bounds are the caller's business: objectives are expected to work on an
//! unconstrained parametrisation and to return `+∞` (or NaN) for rejected
//! points, which the simplex treats as worse than everything else.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop when `max f − min f` over the simplex falls below this.
    pub f_tol: f64,
    /// ... and every vertex is within this distance (max-norm) of the best.
    pub x_tol: f64,
    pub max_iterations: usize,
    /// Restarts from the converged point with a fresh simplex; a restart
    /// that does not improve the objective ends the search.
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { f_tol: 1e-8, x_tol: 1e-8, max_iterations: 2000, max_restarts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimises `f` from `x0` with initial simplex edges `step`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut evaluations = 0;
    let mut iterations = 0;
    let mut best_x = x0.to_vec();
    let mut best_f = eval(x0);
    evaluations += 1;
    let mut converged = false;

    for restart in 0..=opts.max_restarts {
        let scale = if restart == 0 { 1.0 } else { 0.1 };
        let run = simplex_run(&mut eval, &best_x, best_f, step, scale, opts, opts.max_iterations - iterations);
        iterations += run.iterations;
        evaluations += run.evaluations;
        let improved = best_f - run.f;
        let close = run.x.iter().zip(&best_x).all(|(a, b)| (a - b).abs() <= opts.x_tol);
        if run.f <= best_f {
            best_x = run.x;
            best_f = run.f;
        }
        converged = run.converged;
        if !run.converged || iterations >= opts.max_iterations {
            break;
        }
        if restart > 0 && improved <= opts.f_tol && close {
            break;
        }
    }
    NelderMeadResult { x: best_x, f: best_f, iterations, evaluations, converged }
}

struct Run {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

fn simplex_run<F>(
    eval: &mut F,
    x0: &[f64],
    f0: f64,
    step: &[f64],
    scale: f64,
    opts: &NelderMeadOptions,
    budget: usize,
) -> Run
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals = Vec::with_capacity(n + 1);
    let mut evaluations = 0;
    pts.push(x0.to_vec());
    vals.push(f0);
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += scale * step[i];
        vals.push(eval(&p));
        evaluations += 1;
        pts.push(p);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < budget {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);
        let spread = pts
            .iter()
            .flat_map(|p| p.iter().zip(&pts[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if vals[worst] - vals[best] <= opts.f_tol && spread <= opts.x_tol.max(1e-9) {
            converged = true;
            break;
        }
        if spread < 1e-15 {
            // Collapsed on a flat or rejected region.
            converged = vals[worst] - vals[best] <= opts.f_tol;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&pts[i]) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&pts[worst]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        evaluations += 1;
        if fr < vals[best] {
            let xe = along(gamma);
            let fe = eval(&xe);
            evaluations += 1;
            if fe < fr {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[worst] {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        evaluations += 1;
        if fc < vals[worst].min(fr) {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        let anchor = pts[best].clone();
        for &i in &order[1..] {
            for (p, a) in pts[i].iter_mut().zip(&anchor) {
                *p = a + sigma * (*p - a);
            }
            vals[i] = eval(&pts[i]);
            evaluations += 1;
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    Run { x: pts[best].clone(), f: vals[best], iterations, evaluations, converged }
}
