//! Meta-tasks, online function-gap bounds and the meta-weight / meta-influence
//! updates.
//!
//! Each BO iteration calls [`step_meta_state`] once. It bounds the gap between
//! every meta-task and the target from the current target posterior, feeds the
//! bounds into an entropic FTRL update for the weights `ω` and decays the
//! overall meta influence `ν`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit, Dataset, GpPosterior, JitterMode, KernelSpec};

/// A previously solved task with its surrogate fit once up front.
#[derive(Clone, Debug)]
pub struct MetaTask {
    id: usize,
    posterior: GpPosterior,
    true_gap: Option<f64>,
}

impl MetaTask {
    /// Fits the meta surrogate (`K + σ²I`). Requires at least one observation.
    pub fn new(id: usize, data: Dataset, kernel: &KernelSpec) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::input(format!("meta-task {id} has no observations")));
        }
        let posterior = fit(kernel, &data, JitterMode::Meta)?;
        Ok(MetaTask {
            id,
            posterior,
            true_gap: None,
        })
    }

    /// Attach the known gap `max_j |f_i(x_ij) − f(x_ij)|` (synthetic tasks only).
    pub fn with_true_gap(mut self, gap: f64) -> Self {
        self.true_gap = Some(gap);
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn data(&self) -> &Dataset {
        self.posterior.data()
    }

    pub fn len(&self) -> usize {
        self.posterior.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn posterior(&self) -> &GpPosterior {
        &self.posterior
    }

    pub fn true_gap(&self) -> Option<f64> {
        self.true_gap
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Worst case over the task's inputs.
    Max,
    /// Empirical mean over the task's inputs.
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// `l_i = N · d̄_i` with `N = max_i N_i`.
    #[default]
    Simplified,
    /// `l_i = N_i (2√(2σ² log(8N_i/δ)) + d̄_i)`.
    Full,
}

/// How the meta weights are chosen each iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    #[default]
    Ftrl,
    Fixed(Vec<f64>),
}

/// How `ν_t` evolves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NuSchedule {
    /// `ν_1 = 1`, `ν_t = ν_{t−1} · min(r, (Σ ω_i d̄_i)^{−ε})`.
    #[default]
    Adaptive,
    Constant(f64),
    /// Explicit per-iteration values; the last one repeats.
    Explicit(Vec<f64>),
}

impl NuSchedule {
    fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        match self {
            NuSchedule::Adaptive => Ok(()),
            NuSchedule::Constant(v) if in_range(*v) => Ok(()),
            NuSchedule::Constant(v) => Err(Error::input(format!("constant nu {v} outside [0, 1]"))),
            NuSchedule::Explicit(vs) => {
                if vs.is_empty() || !vs.iter().all(|v| in_range(*v)) {
                    return Err(Error::input("explicit nu schedule must be nonempty with values in [0, 1]"));
                }
                if vs.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::input("explicit nu schedule must be non-increasing"));
                }
                Ok(())
            }
        }
    }
}

/// Constants of the meta update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// FTRL learning rate `η`.
    pub eta: f64,
    /// Aggressiveness `ε` of the adaptive `ν` decay.
    pub epsilon: f64,
    /// Minimum decay rate `r ∈ (0, 1)`.
    pub min_decay: f64,
    /// Confidence level `δ` of the gap bounds.
    pub delta: f64,
    pub gap_mode: GapMode,
    pub loss_form: LossForm,
    pub weights: WeightRule,
    pub nu: NuSchedule,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            eta: 0.05,
            epsilon: 0.7,
            min_decay: 0.7,
            delta: 0.1,
            gap_mode: GapMode::Mean,
            loss_form: LossForm::Simplified,
            weights: WeightRule::Ftrl,
            nu: NuSchedule::Adaptive,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self, num_tasks: usize) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::input(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::input(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.min_decay > 0.0 && self.min_decay < 1.0) {
            return Err(Error::input(format!("r must lie in (0, 1), got {}", self.min_decay)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::input(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let WeightRule::Fixed(w) = &self.weights {
            if w.len() != num_tasks {
                return Err(Error::input(format!(
                    "{} fixed weights for {num_tasks} meta-tasks",
                    w.len()
                )));
            }
            check_simplex(w)?;
        }
        self.nu.validate()
    }
}

pub(crate) fn check_simplex(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Ok(());
    }
    let sum: f64 = w.iter().sum();
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("weights {w:?} are not on the simplex")));
    }
    Ok(())
}

/// High-probability upper bound on one task's function gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapBound {
    pub task_id: usize,
    pub value: f64,
    pub noise_correction: f64,
}

/// `(μ_t(x) + β σ_t(x), μ_t(x) − β σ_t(x))`.
pub fn confidence_bounds(target: &GpPosterior, x: &[f64], beta_next: f64) -> Result<(f64, f64)> {
    let (mean, std) = target.predict_std(x)?;
    Ok((mean + beta_next * std, mean - beta_next * std))
}

/// `√(2σ² log(8 n / δ))`.
pub fn noise_correction(noise_variance: f64, n: usize, delta: f64) -> f64 {
    (2.0 * noise_variance * (8.0 * n as f64 / delta).ln()).sqrt()
}

/// Bound `d̄_{i,t}` for one meta-task from the current target posterior.
///
/// `total_meta_obs` is `Σ_i N_i` over all tasks. The noise variance is read
/// from the target posterior's kernel.
pub fn estimate_gap_bound(
    task: &MetaTask,
    target: &GpPosterior,
    beta_next: f64,
    delta: f64,
    total_meta_obs: usize,
    mode: GapMode,
) -> Result<GapBound> {
    if task.is_empty() {
        return Err(Error::input(format!("meta-task {} has no observations", task.id)));
    }
    let data = task.data();
    let mut agg = 0.0f64;
    for (x, &y) in data.inputs().iter().zip(data.outputs()) {
        let (upper, lower) = confidence_bounds(target, x, beta_next)?;
        let dev = (y - upper).abs().max((y - lower).abs());
        agg = match mode {
            GapMode::Max => agg.max(dev),
            GapMode::Mean => agg + dev,
        };
    }
    if mode == GapMode::Mean {
        agg /= data.len() as f64;
    }
    let correction = noise_correction(target.kernel().noise_variance, total_meta_obs, delta);
    Ok(GapBound {
        task_id: task.id,
        value: correction + agg,
        noise_correction: correction,
    })
}

/// Per-task losses `l_{i,t}` in the full form.
pub fn loss_vector(gaps: &[GapBound], task_sizes: &[usize], sigma2: f64, delta: f64) -> Result<Vec<f64>> {
    if gaps.len() != task_sizes.len() {
        return Err(Error::input(format!(
            "{} gap bounds but {} task sizes",
            gaps.len(),
            task_sizes.len()
        )));
    }
    Ok(gaps
        .iter()
        .zip(task_sizes)
        .map(|(g, &n)| n as f64 * (2.0 * noise_correction(sigma2, n, delta) + g.value))
        .collect())
}

/// Per-task losses `N · d̄_{i,t}` assuming every task has about `n` points.
pub fn simplified_loss_vector(gaps: &[GapBound], n: usize) -> Vec<f64> {
    gaps.iter().map(|g| n as f64 * g.value).collect()
}

/// Closed-form entropic FTRL weights: a softmax of `−η · cumulative loss`.
pub fn ftrl_update(cumulative_losses: &[f64], eta: f64) -> Vec<f64> {
    if cumulative_losses.is_empty() {
        return Vec::new();
    }
    let min = cumulative_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let unnorm: Vec<f64> = cumulative_losses.iter().map(|l| (-eta * (l - min)).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|u| u / z).collect()
}

/// One step of the adaptive decay: `ν_prev · min(r, gap^{−ε})`, clamped to `[0, 1]`.
///
/// A zero weighted gap decays by exactly `r`.
pub fn nu_update(nu_prev: f64, weighted_gap: f64, min_decay: f64, epsilon: f64) -> f64 {
    let factor = if weighted_gap <= 0.0 {
        min_decay
    } else {
        min_decay.min(weighted_gap.powf(-epsilon))
    };
    (nu_prev * factor).clamp(0.0, 1.0)
}

/// Weights, meta influence and accumulated losses carried between iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    weights: Vec<f64>,
    nu: f64,
    cumulative_losses: Vec<f64>,
    gap_history: Vec<Vec<f64>>,
    iteration: usize,
    config: MetaConfig,
}

impl MetaState {
    /// State before the first iteration: uniform weights, `ν = 1`
    /// (or `0` without meta-tasks).
    pub fn new(num_tasks: usize, config: MetaConfig) -> Result<Self> {
        config.validate(num_tasks)?;
        let weights = match &config.weights {
            WeightRule::Fixed(w) => w.clone(),
            WeightRule::Ftrl => vec![1.0 / num_tasks as f64; num_tasks],
        };
        let nu = if num_tasks == 0 { 0.0 } else { 1.0 };
        Ok(MetaState {
            weights,
            nu,
            cumulative_losses: vec![0.0; num_tasks],
            gap_history: vec![Vec::new(); num_tasks],
            iteration: 0,
            config,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn cumulative_losses(&self) -> &[f64] {
        &self.cumulative_losses
    }

    /// `d̄_{i,s}` for every task `i` and past step `s`.
    pub fn gap_history(&self) -> &[Vec<f64>] {
        &self.gap_history
    }

    /// Number of completed steps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &MetaConfig {
        &self.config
    }

    pub fn num_tasks(&self) -> usize {
        self.weights.len()
    }

    /// Copy with the given weights and influence; used for fixtures and ablations.
    pub fn with_weights_and_nu(&self, weights: Vec<f64>, nu: f64) -> Result<Self> {
        if weights.len() != self.num_tasks() {
            return Err(Error::input("weight vector length does not match task count"));
        }
        check_simplex(&weights)?;
        if !(0.0..=1.0).contains(&nu) {
            return Err(Error::input(format!("nu {nu} outside [0, 1]")));
        }
        let mut next = self.clone();
        next.weights = weights;
        next.nu = nu;
        Ok(next)
    }
}

/// Advance the meta state by one BO iteration.
///
/// Every step bounds the gaps from `target`, records them and adds their
/// losses to the running totals. On the first step the weights stay uniform
/// and `ν = 1`; afterwards the weights come from FTRL over all recorded
/// losses and `ν` decays by the weighted gap bound.
pub fn step_meta_state(
    state: &MetaState,
    tasks: &[MetaTask],
    target: &GpPosterior,
    beta_next: f64,
) -> Result<MetaState> {
    if tasks.len() != state.num_tasks() {
        return Err(Error::input(format!(
            "meta state tracks {} tasks but {} were supplied",
            state.num_tasks(),
            tasks.len()
        )));
    }
    let cfg = &state.config;
    let mut next = state.clone();
    next.iteration += 1;
    let t = next.iteration;

    if tasks.is_empty() {
        next.nu = 0.0;
        return Ok(next);
    }

    let total: usize = tasks.iter().map(MetaTask::len).sum();
    let gaps = tasks
        .iter()
        .map(|task| estimate_gap_bound(task, target, beta_next, cfg.delta, total, cfg.gap_mode))
        .collect::<Result<Vec<_>>>()?;
    let losses = match cfg.loss_form {
        LossForm::Simplified => {
            let n = tasks.iter().map(MetaTask::len).max().unwrap_or(0);
            simplified_loss_vector(&gaps, n)
        }
        LossForm::Full => {
            let sizes: Vec<usize> = tasks.iter().map(MetaTask::len).collect();
            loss_vector(&gaps, &sizes, target.kernel().noise_variance, cfg.delta)?
        }
    };
    for (i, (g, l)) in gaps.iter().zip(&losses).enumerate() {
        next.gap_history[i].push(g.value);
        next.cumulative_losses[i] += l;
    }

    next.weights = match &cfg.weights {
        WeightRule::Fixed(w) => w.clone(),
        WeightRule::Ftrl if t == 1 => vec![1.0 / tasks.len() as f64; tasks.len()],
        WeightRule::Ftrl => ftrl_update(&next.cumulative_losses, cfg.eta),
    };

    next.nu = match &cfg.nu {
        NuSchedule::Adaptive if t == 1 => 1.0,
        NuSchedule::Adaptive => {
            let weighted: f64 = next.weights.iter().zip(&gaps).map(|(w, g)| w * g.value).sum();
            nu_update(state.nu, weighted, cfg.min_decay, cfg.epsilon)
        }
        NuSchedule::Constant(v) => *v,
        NuSchedule::Explicit(vs) => vs[(t - 1).min(vs.len() - 1)],
    };
    Ok(next)
}
