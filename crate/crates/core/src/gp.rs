//! Gaussian-process regression with the squared-exponential kernel.
//!
//! A [`GpPosterior`] is fit once from a [`Dataset`] and then only read. Two
//! diagonal-loading conventions exist: the target surrogate adds the
//! regularization constant λ, meta-task surrogates add the observation noise
//! variance σ². See [`JitterMode`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to every posterior variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Relative jitter (times σ_k²) added on the single factorization retry.
const RETRY_JITTER: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub regularization: f64,
}

impl KernelSpec {
    pub fn new(
        lengthscale: f64,
        signal_variance: f64,
        noise_variance: f64,
        regularization: f64,
    ) -> Result<Self> {
        let spec = KernelSpec {
            lengthscale,
            signal_variance,
            noise_variance,
            regularization,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lengthscale", self.lengthscale),
            ("signal_variance", self.signal_variance),
            ("noise_variance", self.noise_variance),
            ("regularization", self.regularization),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Same hyperparameters with a different regularization constant.
    pub fn with_regularization(mut self, regularization: f64) -> Self {
        self.regularization = regularization;
        self
    }

    /// Kernel value without a dimension check. Callers guarantee equal lengths.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), x2.len());
        let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
        self.signal_variance * (-sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// `σ_k² · exp(−‖x − x2‖² / (2ℓ²))`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::input(format!(
            "kernel arguments differ in dimension: {} vs {}",
            x.len(),
            x2.len()
        )));
    }
    Ok(spec.eval_unchecked(x, x2))
}

/// Paired inputs and outputs. All inputs share one dimension.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::input(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let dim = first.len();
            if dim == 0 {
                return Err(Error::input("inputs must have dimension >= 1"));
            }
            if let Some((i, bad)) = inputs.iter().enumerate().find(|(_, x)| x.len() != dim) {
                return Err(Error::input(format!(
                    "input {i} has dimension {} but input 0 has dimension {dim}",
                    bad.len()
                )));
            }
        }
        Ok(Dataset { inputs, outputs })
    }

    pub fn empty() -> Self {
        Dataset::default()
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Input dimension, or `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        match self.dim() {
            Some(d) if d != x.len() => {
                return Err(Error::input(format!(
                    "new input has dimension {} but dataset has dimension {d}",
                    x.len()
                )))
            }
            None if x.is_empty() => return Err(Error::input("inputs must have dimension >= 1")),
            _ => {}
        }
        self.inputs.push(x);
        self.outputs.push(y);
        Ok(())
    }
}

/// Which constant is added to the kernel matrix diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterMode {
    /// Target surrogate: `K + λI`.
    Target,
    /// Meta-task surrogate: `K + σ²I`.
    Meta,
}

impl JitterMode {
    pub fn constant(self, spec: &KernelSpec) -> f64 {
        match self {
            JitterMode::Target => spec.regularization,
            JitterMode::Meta => spec.noise_variance,
        }
    }
}

/// A fitted, immutable GP surrogate.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    kernel: KernelSpec,
    data: Dataset,
    jitter: f64,
    factor: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

pub(crate) fn gram_matrix(spec: &KernelSpec, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = spec.signal_variance;
        for j in 0..i {
            let v = spec.eval_unchecked(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `matrix`, retrying once with extra diagonal jitter.
pub(crate) fn cholesky_with_retry(
    matrix: DMatrix<f64>,
    retry_jitter: f64,
) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(matrix.clone()) {
        return Ok(ch);
    }
    let n = matrix.nrows();
    let mut loaded = matrix.clone();
    for i in 0..n {
        loaded[(i, i)] += retry_jitter;
    }
    Cholesky::new(loaded).ok_or_else(|| {
        let eig = SymmetricEigen::new(matrix).eigenvalues;
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Error::numeric(format!(
            "matrix of size {n} is not positive definite after jitter {retry_jitter:e}: \
             eigenvalues in [{min:e}, {max:e}], condition estimate {:e}",
            max / min.abs().max(f64::MIN_POSITIVE)
        ))
    })
}

/// Fit a posterior. Empty data yields the prior.
pub fn fit(spec: &KernelSpec, data: &Dataset, mode: JitterMode) -> Result<GpPosterior> {
    spec.validate()?;
    let jitter = mode.constant(spec);
    if data.is_empty() {
        return Ok(GpPosterior {
            kernel: *spec,
            data: data.clone(),
            jitter,
            factor: None,
            alpha: DVector::zeros(0),
        });
    }
    let mut k = gram_matrix(spec, data.inputs());
    for i in 0..data.len() {
        k[(i, i)] += jitter;
    }
    let factor = cholesky_with_retry(k, RETRY_JITTER * spec.signal_variance)?;
    let alpha = factor.solve(&DVector::from_column_slice(data.outputs()));
    Ok(GpPosterior {
        kernel: *spec,
        data: data.clone(),
        jitter,
        factor: Some(factor),
        alpha,
    })
}

impl GpPosterior {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// The diagonal constant `c` in `K + cI`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K + cI`, or `None` for the prior.
    pub fn factor(&self) -> Option<DMatrix<f64>> {
        self.factor.as_ref().map(|f| f.l())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        match self.data.dim() {
            Some(d) if d != x.len() => Err(Error::input(format!(
                "query has dimension {} but training data has dimension {d}",
                x.len()
            ))),
            _ if x.is_empty() => Err(Error::input("query point is empty")),
            _ => Ok(()),
        }
    }

    fn cross_covariance(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.data.len(),
            self.data.inputs().iter().map(|xi| self.kernel.eval_unchecked(xi, x)),
        )
    }

    /// Posterior `(mean, variance)` at `x`; variance floored at [`VARIANCE_FLOOR`].
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(x)?;
        let prior = self.kernel.signal_variance;
        let Some(factor) = &self.factor else {
            return Ok((0.0, prior));
        };
        let kx = self.cross_covariance(x);
        let mean = kx.dot(&self.alpha);
        let v = factor
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("cholesky factor has a nonzero diagonal");
        let var = (prior - v.norm_squared()).clamp(VARIANCE_FLOOR, prior);
        Ok((mean, var))
    }

    /// Posterior mean and standard deviation.
    pub fn predict_std(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, v) = self.predict(x)?;
        Ok((m, v.sqrt()))
    }
}

/// Log evidence `log p(y | X)` under `K + σ²I`.
pub fn log_marginal_likelihood(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("log marginal likelihood needs at least one observation"));
    }
    let post = fit(spec, data, JitterMode::Meta)?;
    let factor = post.factor.as_ref().expect("nonempty data has a factor");
    let y = DVector::from_column_slice(data.outputs());
    let log_det_half: f64 = factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let n = data.len() as f64;
    Ok(-0.5 * y.dot(&post.alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Grid-search maximum likelihood. Ties go to the earliest grid entry.
pub fn fit_hyperparameters(data: &Dataset, grid: &[KernelSpec]) -> Result<KernelSpec> {
    if grid.is_empty() {
        return Err(Error::input("hyperparameter grid is empty"));
    }
    let mut best: Option<(f64, KernelSpec)> = None;
    let mut last_err = None;
    for spec in grid {
        match log_marginal_likelihood(spec, data) {
            Ok(ll) => {
                if best.is_none_or(|(b, _)| ll > b) {
                    best = Some((ll, *spec));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((_, spec)), _) => Ok(spec),
        (None, Some(e)) => Err(Error::numeric(format!("every grid entry failed: {e}"))),
        (None, None) => unreachable!("nonempty grid"),
    }
}

/// `½ log(1 + σ⁻² σ²_{t−1}(x))`.
pub fn information_gain_increment(post: &GpPosterior, x: &[f64], noise_variance: f64) -> Result<f64> {
    let (_, var) = post.predict(x)?;
    Ok(information_gain_from_variance(var, noise_variance))
}

pub(crate) fn information_gain_from_variance(var: f64, noise_variance: f64) -> f64 {
    0.5 * (var / noise_variance).ln_1p()
}
