//! Multi-seed experiments and their aggregate curves.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{load_meta_tasks, load_objective};
use super::synthetic::{generate_instance, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gp::KernelSpec;
use crate::meta::MetaTask;
use crate::optimizer::{run, Domain, Objective, RegretTrace, RunConfig};

/// A labelled run configuration. The seed inside `config` is replaced per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub config: RunConfig,
}

impl Variant {
    pub fn new(label: impl Into<String>, config: RunConfig) -> Self {
        Variant {
            label: label.into(),
            config,
        }
    }
}

/// Mean and standard error per iteration.
pub type Curve = Vec<(f64, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub label: String,
    pub seed: u64,
    pub message: String,
}

/// Where the objective and meta-tasks of an experiment come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentSource {
    Synthetic(SyntheticSpec),
    Data {
        meta_file: PathBuf,
        objective_file: PathBuf,
        kernel: KernelSpec,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub source: ExperimentSource,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// `(variant label, trace)` in seed-major, variant-minor order.
    pub traces: Vec<(String, RegretTrace)>,
    pub failures: Vec<RunFailure>,
    /// Curve name (`<label>/<quantity>`) to per-iteration mean and standard error.
    pub aggregates: BTreeMap<String, Curve>,
}

impl ExperimentReport {
    pub fn traces_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RegretTrace> + 'a {
        self.traces.iter().filter(move |(l, _)| l == label).map(|(_, t)| t)
    }

    pub fn curve(&self, label: &str, quantity: &str) -> Option<&Curve> {
        self.aggregates.get(&format!("{label}/{quantity}"))
    }

    /// Recompute aggregates from the stored traces.
    pub fn recompute_aggregates(&mut self) {
        self.aggregates = aggregate(&self.variants, &self.traces);
    }
}

/// Sample mean and `s / √n` with the `n − 1` sample standard deviation;
/// zero error for a single value.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn curve_over<F>(traces: &[&RegretTrace], horizon: usize, pick: F) -> Option<Curve>
where
    F: Fn(&crate::optimizer::TraceRow) -> Option<f64>,
{
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let vals: Option<Vec<f64>> = traces.iter().map(|t| t.rows.get(k).and_then(&pick)).collect();
        out.push(mean_stderr(&vals?));
    }
    Some(out)
}

pub(crate) fn aggregate(variants: &[Variant], traces: &[(String, RegretTrace)]) -> BTreeMap<String, Curve> {
    let mut out = BTreeMap::new();
    for v in variants {
        let ts: Vec<&RegretTrace> = traces
            .iter()
            .filter(|(l, t)| *l == v.label && t.complete)
            .map(|(_, t)| t)
            .collect();
        if ts.is_empty() {
            continue;
        }
        let h = v.config.horizon;
        let label = &v.label;
        let mut put = |name: &str, c: Option<Curve>| {
            if let Some(c) = c {
                out.insert(format!("{label}/{name}"), c);
            }
        };
        put("simple_regret", curve_over(&ts, h, |r| r.simple_regret));
        put("cumulative_regret", curve_over(&ts, h, |r| r.cum_regret));
        put("best_observed", curve_over(&ts, h, |r| Some(r.best_observed)));
        put("nu", curve_over(&ts, h, |r| Some(r.nu)));
        put("beta", curve_over(&ts, h, |r| Some(r.beta)));
        let m = ts[0].rows.first().map_or(0, |r| r.weights.len());
        for i in 0..m {
            put(&format!("omega_{i}"), curve_over(&ts, h, |r| r.weights.get(i).copied()));
        }
    }
    out
}

type SeedOutcome = Vec<(String, std::result::Result<RegretTrace, String>)>;

fn check_inputs(variants: &[Variant], seeds: &[u64], num_tasks: usize) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::input("need at least one seed"));
    }
    if variants.is_empty() {
        return Err(Error::input("need at least one variant"));
    }
    variants.iter().try_for_each(|v| v.config.validate(num_tasks))
}

fn run_variants<O: Objective + ?Sized>(
    variants: &[Variant],
    seed: u64,
    objective: &O,
    tasks: &[MetaTask],
    domain: &Domain,
) -> SeedOutcome {
    variants
        .iter()
        .map(|v| {
            let cfg = RunConfig { seed, ..v.config.clone() };
            let outcome = run(&cfg, objective, tasks, domain).map_err(|e| e.to_string());
            (v.label.clone(), outcome)
        })
        .collect()
}

fn collect_report(
    source: ExperimentSource,
    variants: &[Variant],
    seeds: &[u64],
    per_seed: Vec<Result<SeedOutcome>>,
) -> Result<ExperimentReport> {
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in seeds.iter().zip(per_seed) {
        for (label, outcome) in result? {
            match outcome {
                Ok(trace) => {
                    if let Some(msg) = &trace.failure {
                        failures.push(RunFailure { label: label.clone(), seed: *seed, message: msg.clone() });
                    }
                    traces.push((label, trace));
                }
                Err(message) => failures.push(RunFailure { label, seed: *seed, message }),
            }
        }
    }
    let aggregates = aggregate(variants, &traces);
    Ok(ExperimentReport {
        source,
        seeds: seeds.to_vec(),
        variants: variants.to_vec(),
        traces,
        failures,
        aggregates,
    })
}

/// Run every variant on a fresh synthetic instance per seed.
///
/// All variants of one seed share the target, the meta-tasks and (through
/// the shared run seed) the initial design and observation noise. Seeds run
/// in parallel; results are ordered by seed. A failing run is recorded in
/// `failures` and left out of the aggregates.
pub fn run_experiment(spec: &SyntheticSpec, variants: &[Variant], seeds: &[u64]) -> Result<ExperimentReport> {
    spec.validate()?;
    check_inputs(variants, seeds, spec.num_tasks())?;
    let per_seed: Vec<Result<SeedOutcome>> = seeds
        .par_iter()
        .map(|&seed| {
            let inst = generate_instance(spec, seed)?;
            Ok(run_variants(variants, seed, &inst.target, &inst.tasks, &inst.domain))
        })
        .collect();
    collect_report(ExperimentSource::Synthetic(spec.clone()), variants, seeds, per_seed)
}

/// Run every variant against recorded data: meta-tasks from a line-JSON file
/// and a tabulated objective whose inputs form the domain.
pub fn run_data_experiment(
    meta_file: &Path,
    objective_file: &Path,
    kernel: &KernelSpec,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<ExperimentReport> {
    let tasks = load_meta_tasks(meta_file, kernel)?;
    let (domain, objective) = load_objective(objective_file)?;
    check_inputs(variants, seeds, tasks.len())?;
    let per_seed: Vec<Result<SeedOutcome>> = seeds
        .par_iter()
        .map(|&seed| Ok(run_variants(variants, seed, &objective, &tasks, &domain)))
        .collect();
    let source = ExperimentSource::Data {
        meta_file: meta_file.to_path_buf(),
        objective_file: objective_file.to_path_buf(),
        kernel: *kernel,
    };
    collect_report(source, variants, seeds, per_seed)
}

/// Rerun an experiment from its source description.
pub fn replay(source: &ExperimentSource, variants: &[Variant], seeds: &[u64]) -> Result<ExperimentReport> {
    match source {
        ExperimentSource::Synthetic(spec) => run_experiment(spec, variants, seeds),
        ExperimentSource::Data { meta_file, objective_file, kernel } => {
            run_data_experiment(meta_file, objective_file, kernel, variants, seeds)
        }
    }
}
