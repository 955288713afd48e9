//! The outer BO loop and regret bookkeeping.
//!
//! Each iteration updates the meta state from the current target posterior,
//! picks a domain point with the configured acquisition, observes it and
//! refits the target surrogate. Meta surrogates are fit before the loop and
//! never touched again.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    argmax, beta_t, blend_ucb, build_rff_sampler, build_rff_sampler_with_dim, meta_information_gain,
    sample_function, tau, ts_select, ConfidenceParams, SampledFunction,
};
use crate::error::{Error, Result};
use crate::gp::{fit, information_gain_from_variance, Dataset, JitterMode, KernelSpec};
use crate::meta::{step_meta_state, MetaConfig, MetaState, MetaTask};
use crate::rng::{derive_seed, rng_from, stream};

/// Finite candidate set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    points: Vec<Vec<f64>>,
}

impl Domain {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::input("domain must contain at least one point"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::input("domain points must have dimension >= 1"));
        }
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::input("domain points differ in dimension"));
        }
        for i in 0..points.len() {
            for j in 0..i {
                let same = points[i].iter().zip(&points[j]).all(|(a, b)| (a - b).abs() <= 1e-12);
                if same {
                    return Err(Error::input(format!("domain points {j} and {i} coincide")));
                }
            }
        }
        Ok(Domain { points })
    }

    /// `n` evenly spaced points on `[0, 1]`.
    pub fn unit_interval(n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::input("grid needs at least one point")),
            1 => Domain::new(vec![vec![0.0]]),
            _ => Domain::new((0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()),
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Something that can be queried at domain points.
pub trait Objective {
    /// Noise-free value (or the raw recorded value in lookup mode).
    fn evaluate(&self, index: usize, x: &[f64]) -> Result<f64>;

    /// Maximum over the domain when the ground truth is known.
    fn optimum(&self) -> Option<f64>;
}

/// Values tabulated over a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tabulated {
    values: Vec<f64>,
    ground_truth: bool,
}

impl Tabulated {
    /// Known noise-free function; regret is reported.
    pub fn ground_truth(values: Vec<f64>) -> Self {
        Tabulated {
            values,
            ground_truth: true,
        }
    }

    /// Recorded outcomes without a known optimum; best observed value is reported.
    pub fn lookup(values: Vec<f64>) -> Self {
        Tabulated {
            values,
            ground_truth: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn argmax(&self) -> Option<usize> {
        argmax(self.values.iter().copied())
    }
}

impl Objective for Tabulated {
    fn evaluate(&self, index: usize, _x: &[f64]) -> Result<f64> {
        match self.values.get(index) {
            Some(v) if v.is_finite() => Ok(*v),
            Some(v) => Err(Error::Objective {
                index,
                message: format!("non-finite value {v}"),
            }),
            None => Err(Error::Objective {
                index,
                message: format!("table has only {} entries", self.values.len()),
            }),
        }
    }

    fn optimum(&self) -> Option<f64> {
        if !self.ground_truth {
            return None;
        }
        self.values.iter().cloned().reduce(f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    RmGpUcb,
    RmGpTs,
    GpUcb,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::RmGpUcb => "rm_gp_ucb",
            Algorithm::RmGpTs => "rm_gp_ts",
            Algorithm::GpUcb => "gp_ucb",
        }
    }

    fn uses_meta(self) -> bool {
        !matches!(self, Algorithm::GpUcb)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rm_gp_ucb" | "rm-gp-ucb" => Ok(Algorithm::RmGpUcb),
            "rm_gp_ts" | "rm-gp-ts" => Ok(Algorithm::RmGpTs),
            "gp_ucb" | "gp-ucb" => Ok(Algorithm::GpUcb),
            other => Err(Error::input(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `β_t` from the running information-gain surrogate.
    #[default]
    Theory,
    Fixed(f64),
}

/// Everything a single run needs besides the objective, tasks and domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub horizon: usize,
    /// Target surrogate kernel. `regularization` is the λ added to the target
    /// Gram matrix; `noise_variance` is σ².
    pub kernel: KernelSpec,
    /// RKHS norm bound `B`.
    pub rkhs_bound: f64,
    pub beta: BetaSchedule,
    pub meta: MetaConfig,
    /// Random Fourier features per sampled function.
    pub rff_features: usize,
    /// Redraw the meta-task functions every iteration instead of once per run.
    pub resample_meta: bool,
    /// Random domain points observed before the first iteration.
    pub init_points: usize,
    /// Add `N(0, σ²)` noise to objective values.
    pub observation_noise: bool,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults: target regularization `λ = σ²`, `B = 1`, `m = 120`, two
    /// initial points, noisy observations.
    pub fn new(algorithm: Algorithm, horizon: usize, kernel: KernelSpec, meta: MetaConfig, seed: u64) -> Self {
        let regularization = kernel.noise_variance;
        RunConfig {
            algorithm,
            horizon,
            kernel: kernel.with_regularization(regularization),
            rkhs_bound: 1.0,
            beta: BetaSchedule::Theory,
            meta,
            rff_features: 120,
            resample_meta: false,
            init_points: 2,
            observation_noise: true,
            seed,
        }
    }

    /// The regularization `1 + 2/T` under which the confidence schedule is
    /// proven to hold.
    pub fn theory_regularization(horizon: usize) -> f64 {
        1.0 + 2.0 / horizon.max(1) as f64
    }

    pub fn validate(&self, num_tasks: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::input("horizon must be at least 1"));
        }
        self.kernel.validate()?;
        if !(self.rkhs_bound.is_finite() && self.rkhs_bound >= 0.0) {
            return Err(Error::input("rkhs bound must be nonnegative"));
        }
        if let BetaSchedule::Fixed(b) = self.beta {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::input(format!("fixed beta must be nonnegative, got {b}")));
            }
        }
        if self.rff_features == 0 {
            return Err(Error::input("rff_features must be positive"));
        }
        self.meta.validate(num_tasks)
    }
}

/// One BO iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub index: usize,
    pub x: Vec<f64>,
    pub y: f64,
    /// Noise-free objective value, when known.
    pub f_value: Option<f64>,
    pub inst_regret: Option<f64>,
    pub cum_regret: Option<f64>,
    pub simple_regret: Option<f64>,
    pub best_observed: f64,
    pub nu: f64,
    pub weights: Vec<f64>,
    pub beta: f64,
}

/// Full record of one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegretTrace {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `(domain index, observation)` of the initial design.
    pub init: Vec<(usize, f64)>,
    pub rows: Vec<TraceRow>,
    pub complete: bool,
    pub failure: Option<String>,
    /// Target posterior fits performed, initial design included.
    pub target_fits: usize,
    /// Seconds spent per iteration; not part of run identity.
    pub wall_time: Vec<f64>,
}

impl RegretTrace {
    /// True when both traces made the same decisions and saw the same values.
    pub fn same_outcome(&self, other: &RegretTrace) -> bool {
        self.algorithm == other.algorithm
            && self.seed == other.seed
            && self.init == other.init
            && self.rows == other.rows
            && self.complete == other.complete
    }

    pub fn selections(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.index).collect()
    }
}

/// `S_T = min_t [f(x*) − f(x_t)]`, or `None` without ground truth.
pub fn simple_regret(trace: &RegretTrace) -> Option<f64> {
    trace.rows.last().and_then(|r| r.simple_regret)
}

/// `R_T = Σ_t [f(x*) − f(x_t)]`, or `None` without ground truth.
pub fn cumulative_regret(trace: &RegretTrace) -> Option<f64> {
    trace.rows.last().and_then(|r| r.cum_regret)
}

struct Observer<'a, O: Objective + ?Sized> {
    objective: &'a O,
    noise: Option<Normal<f64>>,
    rng: rand_chacha::ChaCha8Rng,
}

impl<O: Objective + ?Sized> Observer<'_, O> {
    fn observe(&mut self, index: usize, x: &[f64]) -> Result<(f64, f64)> {
        let f = self.objective.evaluate(index, x)?;
        let eps = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
        Ok((f, f + eps))
    }
}

/// Execute one run. Deterministic given `config.seed`.
///
/// Objective failures end the run early; the partial trace comes back with
/// `complete = false` and the error message in `failure`. Configuration
/// errors are returned as `Err`.
pub fn run<O: Objective + ?Sized>(
    config: &RunConfig,
    objective: &O,
    tasks: &[MetaTask],
    domain: &Domain,
) -> Result<RegretTrace> {
    let tasks: &[MetaTask] = if config.algorithm.uses_meta() { tasks } else { &[] };
    config.validate(tasks.len())?;
    let dim = domain.dim();
    if let Some(bad) = tasks.iter().find(|t| t.data().dim() != Some(dim)) {
        return Err(Error::input(format!(
            "meta-task {} has dimension {:?} but the domain has dimension {dim}",
            bad.id(),
            bad.data().dim()
        )));
    }

    let kernel = config.kernel;
    let noise_std = kernel.noise_variance.sqrt();
    let mut params = ConfidenceParams::new(config.rkhs_bound, config.meta.delta, noise_std)?;
    params.num_meta = tasks.len();
    params.max_meta_obs = tasks.iter().map(MetaTask::len).max().unwrap_or(0);

    let mut trace = RegretTrace {
        algorithm: config.algorithm,
        seed: config.seed,
        init: Vec::new(),
        rows: Vec::with_capacity(config.horizon),
        complete: false,
        failure: None,
        target_fits: 0,
        wall_time: Vec::with_capacity(config.horizon),
    };

    let mut observer = Observer {
        objective,
        noise: if config.observation_noise {
            Some(Normal::new(0.0, noise_std).map_err(|e| Error::input(e.to_string()))?)
        } else {
            None
        },
        rng: rng_from(derive_seed(config.seed, stream::NOISE)),
    };

    // initial design: distinct random domain points
    let mut data = Dataset::empty();
    let mut post = fit(&kernel, &data, JitterMode::Target)?;
    trace.target_fits += 1;
    let n_init = config.init_points.min(domain.len());
    let mut init_rng = rng_from(derive_seed(config.seed, stream::INIT));
    let optimum = objective.optimum();
    let mut best_observed = f64::NEG_INFINITY;
    for idx in sample_indices(&mut init_rng, domain.len(), n_init).into_iter() {
        let x = &domain.points()[idx];
        let (_, var) = post.predict(x)?;
        let (_, y) = match observer.observe(idx, x) {
            Ok(v) => v,
            Err(e) => {
                trace.failure = Some(e.to_string());
                return Ok(trace);
            }
        };
        params.accumulate_gain(information_gain_from_variance(var, kernel.noise_variance));
        data.push(x.clone(), y)?;
        post = fit(&kernel, &data, JitterMode::Target)?;
        trace.target_fits += 1;
        trace.init.push((idx, y));
        best_observed = best_observed.max(y);
    }

    let tau_value = if tasks.is_empty() {
        0.0
    } else {
        let gamma_n = tasks
            .iter()
            .map(meta_information_gain)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        tau(&params, gamma_n)
    };

    // meta UCB ingredients per domain point
    let meta_cache: Vec<Vec<(f64, f64)>> = if config.algorithm == Algorithm::RmGpUcb {
        domain
            .points()
            .iter()
            .map(|x| tasks.iter().map(|t| t.posterior().predict_std(x)).collect())
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let draw_meta = |t: usize| -> Result<Vec<SampledFunction>> {
        tasks
            .iter()
            .enumerate()
            .map(|(i, task)| {
                let base = derive_seed(derive_seed(config.seed, stream::TS_META), i as u64);
                let sampler = build_rff_sampler(task.posterior(), config.rff_features, tau_value, base)?;
                Ok(sample_function(&sampler, derive_seed(base, t as u64)))
            })
            .collect()
    };
    let mut meta_samples = if config.algorithm == Algorithm::RmGpTs {
        draw_meta(0)?
    } else {
        Vec::new()
    };

    let mut state = MetaState::new(tasks.len(), config.meta.clone())?;
    let mut cum = 0.0;
    let mut simple = f64::INFINITY;

    for t in 1..=config.horizon {
        let started = Instant::now();
        let beta = match config.beta {
            BetaSchedule::Theory => beta_t(&params, t),
            BetaSchedule::Fixed(b) => b,
        };
        // current β pairs with the current posterior in the gap bounds
        state = step_meta_state(&state, tasks, &post, beta)?;

        let index = match config.algorithm {
            Algorithm::GpUcb | Algorithm::RmGpUcb => {
                let mut scores = Vec::with_capacity(domain.len());
                for (i, x) in domain.points().iter().enumerate() {
                    let tgt = post.predict_std(x)?;
                    let meta = meta_cache.get(i).map(Vec::as_slice).unwrap_or(&[]);
                    scores.push(blend_ucb(state.nu(), state.weights(), meta, tgt, beta, tau_value));
                }
                argmax(scores).expect("nonempty domain")
            }
            Algorithm::RmGpTs => {
                if config.resample_meta && t > 1 {
                    meta_samples = draw_meta(t)?;
                }
                let iter_seed = derive_seed(derive_seed(config.seed, stream::TS_ITER), t as u64);
                let sampler = build_rff_sampler_with_dim(&post, config.rff_features, beta, iter_seed, dim)?;
                ts_select(domain.points(), &sampler, &meta_samples, &state, derive_seed(iter_seed, 1))?.index
            }
        };

        let x = domain.points()[index].clone();
        let (_, var) = post.predict(&x)?;
        let (f, y) = match observer.observe(index, &x) {
            Ok(v) => v,
            Err(e) => {
                trace.failure = Some(e.to_string());
                return Ok(trace);
            }
        };
        params.accumulate_gain(information_gain_from_variance(var, kernel.noise_variance));
        data.push(x.clone(), y)?;
        post = fit(&kernel, &data, JitterMode::Target)?;
        trace.target_fits += 1;
        best_observed = best_observed.max(y);

        let (f_value, inst, cum_r, simple_r) = match optimum {
            Some(opt) => {
                let r = opt - f;
                cum += r;
                simple = simple.min(r);
                (Some(f), Some(r), Some(cum), Some(simple))
            }
            None => (None, None, None, None),
        };
        trace.rows.push(TraceRow {
            t,
            index,
            x,
            y,
            f_value,
            inst_regret: inst,
            cum_regret: cum_r,
            simple_regret: simple_r,
            best_observed,
            nu: state.nu(),
            weights: state.weights().to_vec(),
            beta,
        });
        trace.wall_time.push(started.elapsed().as_secs_f64());
    }
    trace.complete = true;
    Ok(trace)
}
