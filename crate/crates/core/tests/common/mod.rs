//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use rmbo::optimizer::{Domain, Objective, RegretTrace};
use rmbo::rng::{derive_seed, rng_from, stream};
use rmbo::KernelSpec;

pub fn se(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
    spec.signal_variance * (-0.5 * d2 / spec.lengthscale.powi(2)).exp()
}

/// Posterior mean and variance through an explicit full-pivot LU inverse.
pub fn dense_predict(spec: &KernelSpec, xs: &[Vec<f64>], ys: &[f64], c: f64, x: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, spec.signal_variance);
    }
    let k = DMatrix::from_fn(n, n, |i, j| se(spec, &xs[i], &xs[j]) + if i == j { c } else { 0.0 });
    let inv = k.full_piv_lu().try_inverse().expect("invertible gram matrix");
    let kx = DVector::from_fn(n, |i, _| se(spec, &xs[i], x));
    let y = DVector::from_column_slice(ys);
    let mean = kx.dot(&(&inv * y));
    let var = se(spec, x, x) - kx.dot(&(&inv * &kx));
    (mean, var)
}

/// Entropic FTRL objective `⟨ω, L⟩ + η⁻¹ Σ ω ln ω`.
pub fn ftrl_objective(w: &[f64], losses: &[f64], eta: f64) -> f64 {
    w.iter()
        .zip(losses)
        .map(|(&wi, &li)| wi * li + if wi > 0.0 { wi * wi.ln() / eta } else { 0.0 })
        .sum()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing, f(lo) < 0 < f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimize the entropic FTRL objective over the simplex numerically.
///
/// For a multiplier `μ` each coordinate solves its own 1-D stationarity
/// condition by bisection in `log ω`; an outer bisection on `μ` enforces
/// `Σ ω = 1`.
pub fn ftrl_numeric(losses: &[f64], eta: f64) -> Vec<f64> {
    let coord = |l: f64, mu: f64| -> f64 {
        // d/dω [ω l + ω ln ω / η + μ ω] = l + (ln ω + 1)/η + μ
        let u = bisect(-2000.0, 2000.0, |u| l + (u + 1.0) / eta + mu);
        u.exp()
    };
    let total = |mu: f64| -> f64 { losses.iter().map(|&l| coord(l, mu)).sum::<f64>() };
    let lmin = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let lmax = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // total(μ) is decreasing in μ
    let mu = bisect(-lmax - 50.0 / eta, -lmin + 50.0 / eta, |mu| 1.0 - total(mu));
    losses.iter().map(|&l| coord(l, mu)).collect()
}

/// A plain GP-UCB loop that shares the library's seeding conventions:
/// the same initial design stream, noise stream, β schedule and
/// information-gain accounting. The surrogate uses its own Cholesky solve.
#[allow(clippy::too_many_arguments)]
pub fn reference_gp_ucb<O: Objective>(
    kernel: &KernelSpec,
    objective: &O,
    domain: &Domain,
    horizon: usize,
    init_points: usize,
    rkhs_bound: f64,
    delta: f64,
    seed: u64,
) -> Vec<usize> {
    let pts = domain.points();
    let sigma = kernel.noise_variance.sqrt();
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut noise_rng = rng_from(derive_seed(seed, stream::NOISE));
    let mut init_rng = rng_from(derive_seed(seed, stream::INIT));
    let lam = kernel.regularization;

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut gamma = 0.0;

    let predict = |xs: &[Vec<f64>], ys: &[f64], x: &[f64]| -> (f64, f64) {
        let n = xs.len();
        if n == 0 {
            return (0.0, kernel.signal_variance);
        }
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = kernel.signal_variance;
            for j in 0..i {
                let v = se(kernel, &xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        for i in 0..n {
            k[(i, i)] += lam;
        }
        let ch = nalgebra::Cholesky::new(k).expect("positive definite");
        let alpha = ch.solve(&DVector::from_column_slice(ys));
        let kx = DVector::from_iterator(n, xs.iter().map(|xi| se(kernel, xi, x)));
        let v = ch.l_dirty().solve_lower_triangular(&kx).unwrap();
        let var = (kernel.signal_variance - v.norm_squared()).clamp(1e-12, kernel.signal_variance);
        (kx.dot(&alpha), var)
    };

    for idx in sample(&mut init_rng, pts.len(), init_points.min(pts.len())).into_iter() {
        let (_, var) = predict(&xs, &ys, &pts[idx]);
        gamma += 0.5 * (var / kernel.noise_variance).ln_1p();
        let f = objective.evaluate(idx, &pts[idx]).unwrap();
        xs.push(pts[idx].clone());
        ys.push(f + noise.sample(&mut noise_rng));
    }

    let mut picks = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let beta = rkhs_bound + sigma * (2.0 * (gamma + 1.0 + (4.0 / delta).ln())).sqrt();
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, x) in pts.iter().enumerate() {
            let (m, v) = predict(&xs, &ys, x);
            let score = m + beta * v.sqrt();
            if score > best.0 {
                best = (score, i);
            }
        }
        let idx = best.1;
        let (_, var) = predict(&xs, &ys, &pts[idx]);
        gamma += 0.5 * (var / kernel.noise_variance).ln_1p();
        let f = objective.evaluate(idx, &pts[idx]).unwrap();
        xs.push(pts[idx].clone());
        ys.push(f + noise.sample(&mut noise_rng));
        picks.push(idx);
    }
    picks
}

/// Every per-trace invariant; returns a description of the first violation.
pub fn check_trace_invariants(trace: &RegretTrace, min_decay: f64) -> Result<(), String> {
    let mut prev_nu = f64::INFINITY;
    let mut prev_s = f64::INFINITY;
    let mut prev_r = f64::NEG_INFINITY;
    for row in &trace.rows {
        if !row.weights.is_empty() {
            let sum: f64 = row.weights.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.weights.iter().any(|w| *w < 0.0) {
                return Err(format!("t={}: weights {:?} off the simplex", row.t, row.weights));
            }
        }
        if row.nu > prev_nu {
            return Err(format!("t={}: nu rose from {prev_nu} to {}", row.t, row.nu));
        }
        let cap = min_decay.powi(row.t as i32 - 1);
        if row.nu > cap * (1.0 + 1e-12) {
            return Err(format!("t={}: nu {} above r^(t-1) = {cap}", row.t, row.nu));
        }
        prev_nu = row.nu;
        if let Some(s) = row.simple_regret {
            if s > prev_s {
                return Err(format!("t={}: simple regret rose", row.t));
            }
            prev_s = s;
        }
        if let Some(r) = row.cum_regret {
            if r < prev_r {
                return Err(format!("t={}: cumulative regret fell", row.t));
            }
            prev_r = r;
        }
    }
    Ok(())
}
