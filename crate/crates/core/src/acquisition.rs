//! Query selection: the weighted UCB acquisition, the two-branch Thompson
//! sampling rule with random-Fourier-feature posterior samples, and the
//! confidence-width schedules `β_t` and `τ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{cholesky_with_retry, fit, information_gain_from_variance, Dataset, GpPosterior, JitterMode};
use crate::meta::{MetaState, MetaTask};
use crate::rng::rng_from;

/// Inputs of the `β_t` and `τ` schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    /// RKHS norm bound `B`.
    pub rkhs_bound: f64,
    pub delta: f64,
    /// Observation noise standard deviation `σ`.
    pub sigma: f64,
    /// Running information-gain surrogate standing in for `γ_{t−1}`.
    pub gamma_running: f64,
    pub num_meta: usize,
    pub max_meta_obs: usize,
}

impl ConfidenceParams {
    pub fn new(rkhs_bound: f64, delta: f64, sigma: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(rkhs_bound >= 0.0 && sigma >= 0.0) {
            return Err(Error::input("rkhs bound and sigma must be nonnegative"));
        }
        Ok(ConfidenceParams {
            rkhs_bound,
            delta,
            sigma,
            gamma_running: 0.0,
            num_meta: 0,
            max_meta_obs: 0,
        })
    }

    /// Add one information-gain increment to the running surrogate.
    pub fn accumulate_gain(&mut self, increment: f64) {
        debug_assert!(increment >= 0.0);
        self.gamma_running += increment;
    }
}

/// `β_t = B + σ √(2(γ_{t−1} + 1 + log(4/δ)))` with `γ_{t−1}` taken from
/// `params.gamma_running`.
pub fn beta_t(params: &ConfidenceParams, t: usize) -> f64 {
    debug_assert!(t >= 1);
    params.rkhs_bound
        + params.sigma * (2.0 * (params.gamma_running + 1.0 + (4.0 / params.delta).ln())).sqrt()
}

/// `τ = B + σ √(2(γ_N + 1 + log(4M/δ)))`.
pub fn tau(params: &ConfidenceParams, gamma_n: f64) -> f64 {
    let m = params.num_meta.max(1) as f64;
    params.rkhs_bound + params.sigma * (2.0 * (gamma_n + 1.0 + (4.0 * m / params.delta).ln())).sqrt()
}

/// Information gain of a meta-task's own points, added one at a time in
/// stored order. Used as the `γ_N` surrogate inside `τ`.
pub fn meta_information_gain(task: &MetaTask) -> Result<f64> {
    let kernel = task.posterior().kernel();
    let data = task.data();
    let mut prefix = Dataset::empty();
    let mut gain = 0.0;
    for (x, &y) in data.inputs().iter().zip(data.outputs()) {
        let post = fit(kernel, &prefix, JitterMode::Meta)?;
        let (_, var) = post.predict(x)?;
        gain += information_gain_from_variance(var, kernel.noise_variance);
        prefix.push(x.clone(), y)?;
    }
    Ok(gain)
}

/// Blended UCB score: `ν Σ ω_i (μ̄_i + τ σ̄_i) + (1 − ν)(μ + β σ)`.
///
/// `meta` holds `(mean, std)` per task, `target` the target `(mean, std)`.
pub fn blend_ucb(nu: f64, weights: &[f64], meta: &[(f64, f64)], target: (f64, f64), beta: f64, tau: f64) -> f64 {
    let meta_term: f64 = weights
        .iter()
        .zip(meta)
        .map(|(w, (m, s))| w * (m + tau * s))
        .sum();
    let target_term = target.0 + beta * target.1;
    nu * meta_term + (1.0 - nu) * target_term
}

/// Weighted UCB acquisition at one point.
pub fn ucb_acquisition(
    x: &[f64],
    target: &GpPosterior,
    tasks: &[MetaTask],
    state: &MetaState,
    beta: f64,
    tau: f64,
) -> Result<f64> {
    if tasks.len() != state.num_tasks() {
        return Err(Error::input("task count does not match meta state"));
    }
    let meta = tasks
        .iter()
        .map(|t| t.posterior().predict_std(x))
        .collect::<Result<Vec<_>>>()?;
    let tgt = target.predict_std(x)?;
    Ok(blend_ucb(state.nu(), state.weights(), &meta, tgt, beta, tau))
}

/// Index of the largest score, lowest index on ties.
pub(crate) fn argmax<I: IntoIterator<Item = f64>>(scores: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        match best {
            Some((_, b)) if s.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Domain index maximizing [`ucb_acquisition`].
pub fn ucb_select(
    domain: &[Vec<f64>],
    target: &GpPosterior,
    tasks: &[MetaTask],
    state: &MetaState,
    beta: f64,
    tau: f64,
) -> Result<usize> {
    if domain.is_empty() {
        return Err(Error::input("domain is empty"));
    }
    let scores = domain
        .iter()
        .map(|x| ucb_acquisition(x, target, tasks, state, beta, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax(scores).expect("nonempty domain"))
}

/// Random Fourier feature map for the SE kernel, rescaled so that
/// `‖φ(x)‖² = σ_k²` at every `x`.
#[derive(Debug)]
pub struct RffFeatures {
    spectral: DMatrix<f64>,
    phases: Vec<f64>,
    signal_variance: f64,
}

impl RffFeatures {
    fn draw<R: Rng>(rng: &mut R, m: usize, dim: usize, lengthscale: f64, signal_variance: f64) -> Self {
        let spectral = DMatrix::from_fn(m, dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z / lengthscale
        });
        let phases = (0..m).map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect();
        RffFeatures {
            spectral,
            phases,
            signal_variance,
        }
    }

    pub fn num_features(&self) -> usize {
        self.phases.len()
    }

    pub fn dim(&self) -> usize {
        self.spectral.ncols()
    }

    /// `φ(x)`: `√(2/m) cos(sᵢᵀx + bᵢ)` rescaled to squared norm `σ_k²`.
    pub fn map(&self, x: &[f64]) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dim());
        let m = self.num_features();
        let amp = (2.0 / m as f64).sqrt();
        let mut phi = DVector::from_fn(m, |i, _| {
            let proj: f64 = self.spectral.row(i).iter().zip(x).map(|(s, xi)| s * xi).sum();
            amp * (proj + self.phases[i]).cos()
        });
        let norm = phi.norm();
        if norm > 0.0 {
            phi *= self.signal_variance.sqrt() / norm;
        }
        phi
    }
}

/// Gaussian posterior over RFF weights from which functions are drawn.
#[derive(Clone, Debug)]
pub struct RffSampler {
    features: Arc<RffFeatures>,
    weight_mean: DVector<f64>,
    weight_cov_factor: DMatrix<f64>,
}

impl RffSampler {
    pub fn features(&self) -> &Arc<RffFeatures> {
        &self.features
    }

    pub fn weight_mean(&self) -> &DVector<f64> {
        &self.weight_mean
    }

    /// `F` with `F Fᵀ` the (inflated) weight covariance.
    pub fn weight_cov_factor(&self) -> &DMatrix<f64> {
        &self.weight_cov_factor
    }

    /// Same sampler with the covariance factor replaced; used for degenerate
    /// fixtures.
    pub fn with_cov_factor(&self, factor: DMatrix<f64>) -> Result<Self> {
        let m = self.features.num_features();
        if factor.shape() != (m, m) {
            return Err(Error::input(format!("covariance factor must be {m}x{m}")));
        }
        Ok(RffSampler {
            weight_cov_factor: factor,
            ..self.clone()
        })
    }
}

/// Build a weight-space posterior for `post`'s data.
///
/// With `Φ` the feature matrix of the training inputs and `c` the
/// posterior's diagonal constant, the weights are `N(Σ Φᵀ y, scale² c Σ)`
/// where `Σ = (ΦᵀΦ + cI)⁻¹`.
pub fn build_rff_sampler(post: &GpPosterior, m: usize, scale: f64, rng_seed: u64) -> Result<RffSampler> {
    let dim = post.data().dim().unwrap_or(1);
    build_rff_sampler_with_dim(post, m, scale, rng_seed, dim)
}

/// As [`build_rff_sampler`] but with an explicit input dimension, needed when
/// the posterior has no data to infer it from.
pub fn build_rff_sampler_with_dim(
    post: &GpPosterior,
    m: usize,
    scale: f64,
    rng_seed: u64,
    dim: usize,
) -> Result<RffSampler> {
    if m == 0 || dim == 0 {
        return Err(Error::input("need at least one random feature and one input dimension"));
    }
    let data = post.data();
    if let Some(d) = data.dim() {
        if d != dim {
            return Err(Error::input(format!("data dimension {d} differs from requested {dim}")));
        }
    }
    let kernel = post.kernel();
    let mut rng = rng_from(rng_seed);
    let features = Arc::new(RffFeatures::draw(&mut rng, m, dim, kernel.lengthscale, kernel.signal_variance));

    let c = post.jitter();
    let n = data.len();
    let mut phi = DMatrix::zeros(n, m);
    for (r, x) in data.inputs().iter().enumerate() {
        phi.set_row(r, &features.map(x).transpose());
    }
    let mut precision = phi.transpose() * &phi;
    for i in 0..m {
        precision[(i, i)] += c;
    }
    let chol = cholesky_with_retry(precision, 1e-9 * kernel.signal_variance)?;
    let y = DVector::from_column_slice(data.outputs());
    let weight_mean = chol.solve(&(phi.transpose() * y));
    // precision = R Rᵀ, so R⁻ᵀ z has covariance precision⁻¹
    let r_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or_else(|| Error::numeric("singular cholesky factor in weight posterior"))?;
    let weight_cov_factor = r_inv.transpose() * (scale * c.sqrt());
    Ok(RffSampler {
        features,
        weight_mean,
        weight_cov_factor,
    })
}

/// One function drawn from an [`RffSampler`].
#[derive(Clone, Debug)]
pub struct SampledFunction {
    features: Arc<RffFeatures>,
    weights: DVector<f64>,
}

impl SampledFunction {
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn features(&self) -> &Arc<RffFeatures> {
        &self.features
    }

    /// `φ(x)ᵀ w`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.features.map(x).dot(&self.weights)
    }
}

/// `weights = mean + F z` with `z` standard normal drawn from `rng_seed`.
pub fn sample_function(sampler: &RffSampler, rng_seed: u64) -> SampledFunction {
    let mut rng = rng_from(rng_seed);
    let m = sampler.features.num_features();
    let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    SampledFunction {
        features: Arc::clone(&sampler.features),
        weights: &sampler.weight_mean + &sampler.weight_cov_factor * z,
    }
}

/// Outcome of [`ts_select`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TsChoice {
    pub index: usize,
    /// Whether the meta branch (probability `ν`) was taken.
    pub meta_branch: bool,
}

/// Two-branch Thompson sampling over a finite domain.
///
/// With probability `ν` maximizes `Σ ω_i f̄_i` over the pre-drawn meta
/// samples; otherwise draws a fresh target function from `target_sampler`
/// and maximizes it.
pub fn ts_select(
    domain: &[Vec<f64>],
    target_sampler: &RffSampler,
    meta_samples: &[SampledFunction],
    state: &MetaState,
    rng_seed: u64,
) -> Result<TsChoice> {
    if domain.is_empty() {
        return Err(Error::input("domain is empty"));
    }
    if meta_samples.len() != state.num_tasks() {
        return Err(Error::input(format!(
            "{} meta samples for {} meta-tasks",
            meta_samples.len(),
            state.num_tasks()
        )));
    }
    let dim = target_sampler.features.dim();
    let features_dims = std::iter::once(dim).chain(meta_samples.iter().map(|s| s.features.dim()));
    for d in features_dims {
        if let Some(bad) = domain.iter().find(|x| x.len() != d) {
            return Err(Error::input(format!(
                "domain point of dimension {} does not match feature dimension {d}",
                bad.len()
            )));
        }
    }
    let mut rng = rng_from(rng_seed);
    let u: f64 = rng.gen();
    let meta_branch = !meta_samples.is_empty() && u < state.nu();
    let index = if meta_branch {
        let w = state.weights();
        argmax(domain.iter().map(|x| {
            meta_samples.iter().zip(w).map(|(f, wi)| wi * f.eval(x)).sum::<f64>()
        }))
    } else {
        let f = sample_function(target_sampler, rng.gen());
        argmax(domain.iter().map(|x| f.eval(x)))
    }
    .expect("nonempty domain");
    Ok(TsChoice { index, meta_branch })
}
