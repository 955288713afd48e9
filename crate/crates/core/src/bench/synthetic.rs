//! Synthetic targets drawn from a GP prior and meta-tasks built by bounded
//! perturbation of the target.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{cholesky_with_retry, gram_matrix, Dataset, KernelSpec};
use crate::meta::MetaTask;
use crate::optimizer::{Domain, Tabulated};
use crate::rng::{derive_seed, rng_from, stream};

/// Jitter (times σ_k²) on the prior covariance when drawing targets.
const PRIOR_JITTER: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Grid points per input dimension over `[0, 1]`.
    pub grid_resolution: usize,
    pub dim: usize,
    /// Kernel of the generating GP; its `noise_variance` is also the
    /// observation noise of meta and target data.
    pub kernel: KernelSpec,
    pub task_sizes: Vec<usize>,
    pub task_gaps: Vec<f64>,
}

impl SyntheticSpec {
    /// Four tasks with 20 points each, gaps `(0.05, 0.05, 4, 4)`, 300-point
    /// grid on `[0, 1]`, lengthscale 0.05, noise variance 0.01.
    pub fn standard() -> Self {
        SyntheticSpec {
            grid_resolution: 300,
            dim: 1,
            kernel: KernelSpec {
                lengthscale: 0.05,
                signal_variance: 1.0,
                noise_variance: 0.01,
                regularization: 0.01,
            },
            task_sizes: vec![20; 4],
            task_gaps: vec![0.05, 0.05, 4.0, 4.0],
        }
    }

    pub fn with_tasks(mut self, sizes: Vec<usize>, gaps: Vec<f64>) -> Self {
        self.task_sizes = sizes;
        self.task_gaps = gaps;
        self
    }

    pub fn num_tasks(&self) -> usize {
        self.task_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution == 0 || self.dim == 0 {
            return Err(Error::input("grid resolution and dimension must be positive"));
        }
        self.kernel.validate()?;
        if self.task_sizes.len() != self.task_gaps.len() {
            return Err(Error::input(format!(
                "{} task sizes but {} task gaps",
                self.task_sizes.len(),
                self.task_gaps.len()
            )));
        }
        if self.task_sizes.contains(&0) {
            return Err(Error::input("every meta-task needs at least one point"));
        }
        if self.task_gaps.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::input("task gaps must be nonnegative and finite"));
        }
        Ok(())
    }

    /// Regular grid with `grid_resolution` points per axis.
    pub fn domain(&self) -> Result<Domain> {
        let res = self.grid_resolution;
        let total = res
            .checked_pow(self.dim as u32)
            .ok_or_else(|| Error::input("grid is too large"))?;
        let axis: Vec<f64> = if res == 1 {
            vec![0.0]
        } else {
            (0..res).map(|i| i as f64 / (res - 1) as f64).collect()
        };
        let points = (0..total)
            .map(|mut k| {
                (0..self.dim)
                    .map(|_| {
                        let v = axis[k % res];
                        k /= res;
                        v
                    })
                    .collect()
            })
            .collect();
        Domain::new(points)
    }
}

/// One exact draw from the zero-mean GP prior over every grid point.
pub fn sample_target_function(spec: &SyntheticSpec, domain: &Domain, seed: u64) -> Result<Tabulated> {
    let kernel = &spec.kernel;
    let mut cov = gram_matrix(kernel, domain.points());
    for i in 0..domain.len() {
        cov[(i, i)] += PRIOR_JITTER * kernel.signal_variance;
    }
    let chol = cholesky_with_retry(cov, PRIOR_JITTER * kernel.signal_variance)?;
    let mut rng = rng_from(seed);
    let z = nalgebra::DVector::from_fn(domain.len(), |_, _| StandardNormal.sample(&mut rng));
    let f = chol.l_dirty().lower_triangle() * z;
    Ok(Tabulated::ground_truth(f.iter().copied().collect()))
}

/// A meta-task whose function differs from `target` by at most `gap` at its inputs.
///
/// Inputs are drawn uniformly (with replacement) from the domain; each gets
/// an independent `Uniform(−gap, gap)` offset and `N(0, noise_variance)` noise.
/// The realized gap is attached as the task's true gap.
pub fn make_meta_task(
    id: usize,
    target: &Tabulated,
    domain: &Domain,
    gap: f64,
    size: usize,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<MetaTask> {
    if size == 0 {
        return Err(Error::input("meta-task size must be at least 1"));
    }
    if target.values().len() != domain.len() {
        return Err(Error::input("target table does not cover the domain"));
    }
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, kernel.noise_variance.sqrt()).map_err(|e| Error::input(e.to_string()))?;
    let mut inputs = Vec::with_capacity(size);
    let mut outputs = Vec::with_capacity(size);
    let mut true_gap = 0.0f64;
    for _ in 0..size {
        let idx = rng.gen_range(0..domain.len());
        let offset = if gap > 0.0 { rng.gen_range(-gap..=gap) } else { 0.0 };
        true_gap = true_gap.max(offset.abs());
        let meta_value = target.values()[idx] + offset;
        inputs.push(domain.points()[idx].clone());
        outputs.push(meta_value + noise.sample(&mut rng));
    }
    Ok(MetaTask::new(id, Dataset::new(inputs, outputs)?, kernel)?.with_true_gap(true_gap))
}

/// The noise-free meta-function values at a task's inputs, for checking the
/// generator: replays the same draws as [`make_meta_task`].
pub fn meta_function_values(target: &Tabulated, domain: &Domain, gap: f64, size: usize, seed: u64) -> Vec<(usize, f64)> {
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    (0..size)
        .map(|_| {
            let idx = rng.gen_range(0..domain.len());
            let offset = if gap > 0.0 { rng.gen_range(-gap..=gap) } else { 0.0 };
            let _: f64 = noise.sample(&mut rng);
            (idx, target.values()[idx] + offset)
        })
        .collect()
}

/// Target function and meta-tasks for one experiment seed.
pub struct SyntheticInstance {
    pub domain: Domain,
    pub target: Tabulated,
    pub tasks: Vec<MetaTask>,
}

pub fn generate_instance(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticInstance> {
    spec.validate()?;
    let domain = spec.domain()?;
    let target = sample_target_function(spec, &domain, derive_seed(seed, stream::TARGET_FN))?;
    let task_base = derive_seed(seed, stream::META_TASKS);
    let tasks = spec
        .task_sizes
        .iter()
        .zip(&spec.task_gaps)
        .enumerate()
        .map(|(i, (&n, &d))| make_meta_task(i, &target, &domain, d, n, &spec.kernel, derive_seed(task_base, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticInstance { domain, target, tasks })
}
