//! `rmbo`: run synthetic or data-driven benchmarks and export their traces.
//!
//! Exit status is 0 on success, 1 for configuration errors and 2 when a run
//! or the export fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rmbo::bench::{
    export_report, load_meta_tasks, load_objective, load_report, run_data_experiment, run_experiment,
    ExperimentReport, Manifest, SyntheticSpec, Variant,
};
use rmbo::meta::{GapMode, LossForm, MetaConfig, WeightRule};
use rmbo::optimizer::{Algorithm, BetaSchedule, RunConfig};
use rmbo::{Error, KernelSpec};

#[derive(Parser, Debug)]
#[command(name = "rmbo", version, about = "Robust meta Bayesian optimization benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize GP-prior draws on a grid with synthetic meta-tasks.
    Synthetic(SyntheticArgs),
    /// Optimize a tabulated objective with meta-tasks read from a file.
    RunData(DataArgs),
    /// Rewrite CSV/JSON outputs from a saved report.json.
    ExportOnly {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun an experiment from its manifest.json.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgoArg {
    RmGpUcb,
    RmGpTs,
    GpUcb,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GapArg {
    Max,
    Mean,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Simplified,
    Full,
}

#[derive(Args, Debug)]
struct AlgoArgs {
    /// Algorithms to run, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rm-gp-ucb,gp-ucb")]
    algo: Vec<AlgoArg>,
    /// Number of seeds; seeds are `seed-offset .. seed-offset + seeds`.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    /// FTRL learning rate; defaults to 1/N with N the largest task size.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    epsilon: f64,
    /// Minimum decay rate of ν.
    #[arg(long, default_value_t = 0.7)]
    r: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, value_enum, default_value = "mean")]
    gap_mode: GapArg,
    #[arg(long, value_enum, default_value = "simplified")]
    loss_form: LossArg,
    /// Fixed meta-weights, comma separated; disables FTRL.
    #[arg(long, value_delimiter = ',')]
    fixed_weights: Option<Vec<f64>>,
    /// Target regularization λ: a number, or `theory` for 1 + 2/T. Defaults to the noise variance.
    #[arg(long)]
    lambda: Option<String>,
    /// Use a constant β instead of the theory schedule.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    rkhs_bound: f64,
    #[arg(long, default_value_t = 120)]
    rff_features: usize,
    /// Redraw the Thompson meta samples every iteration.
    #[arg(long)]
    resample_meta: bool,
    #[arg(long, default_value_t = 2)]
    init_points: usize,
}

#[derive(Args, Debug)]
struct SyntheticArgs {
    #[command(flatten)]
    algo: AlgoArgs,
    /// Meta-task sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20,20,20,20")]
    task_sizes: Vec<usize>,
    /// Meta-task gaps, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.05,4.0,4.0")]
    task_gaps: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    lengthscale: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_variance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[command(flatten)]
    algo: AlgoArgs,
    #[arg(long)]
    meta_file: PathBuf,
    #[arg(long)]
    objective_file: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lengthscale: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_variance: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_variance: f64,
    #[arg(long)]
    out: PathBuf,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn config_err(error: Error) -> Failure {
    Failure { code: 1, error }
}

fn runtime_err(error: Error) -> Failure {
    Failure { code: 2, error }
}

fn algorithm(a: AlgoArg) -> Algorithm {
    match a {
        AlgoArg::RmGpUcb => Algorithm::RmGpUcb,
        AlgoArg::RmGpTs => Algorithm::RmGpTs,
        AlgoArg::GpUcb => Algorithm::GpUcb,
    }
}

fn variants(args: &AlgoArgs, kernel: KernelSpec, max_task_size: usize) -> Result<Vec<Variant>, Failure> {
    let meta = MetaConfig {
        eta: args.eta.unwrap_or(1.0 / max_task_size.max(1) as f64),
        epsilon: args.epsilon,
        min_decay: args.r,
        delta: args.delta,
        gap_mode: match args.gap_mode {
            GapArg::Max => GapMode::Max,
            GapArg::Mean => GapMode::Mean,
        },
        loss_form: match args.loss_form {
            LossArg::Simplified => LossForm::Simplified,
            LossArg::Full => LossForm::Full,
        },
        weights: match &args.fixed_weights {
            Some(w) => WeightRule::Fixed(w.clone()),
            None => WeightRule::Ftrl,
        },
        ..MetaConfig::default()
    };
    let lambda = match args.lambda.as_deref() {
        None => None,
        Some("theory") => Some(RunConfig::theory_regularization(args.horizon)),
        Some(s) => Some(
            s.parse::<f64>()
                .map_err(|_| config_err(Error::Input(format!("--lambda expects a number or `theory`, got `{s}`"))))?,
        ),
    };
    if args.algo.is_empty() {
        return Err(config_err(Error::Input("--algo needs at least one algorithm".into())));
    }
    let mut out = Vec::new();
    for &a in &args.algo {
        let algo = algorithm(a);
        let mut cfg = RunConfig::new(algo, args.horizon, kernel, meta.clone(), 0);
        if let Some(l) = lambda {
            cfg.kernel.regularization = l;
        }
        if let Some(b) = args.beta {
            cfg.beta = BetaSchedule::Fixed(b);
        }
        cfg.rkhs_bound = args.rkhs_bound;
        cfg.rff_features = args.rff_features;
        cfg.resample_meta = args.resample_meta;
        cfg.init_points = args.init_points;
        out.push(Variant::new(algo.name(), cfg));
    }
    Ok(out)
}

fn seeds(args: &AlgoArgs) -> Vec<u64> {
    (args.seed_offset..args.seed_offset + args.seeds).collect()
}

fn summarize(report: &ExperimentReport) {
    for v in &report.variants {
        let line = ["simple_regret", "best_observed"].iter().find_map(|q| {
            report
                .curve(&v.label, q)
                .and_then(|c| c.last())
                .map(|(m, se)| format!("{q} {m:.6} ± {se:.6}"))
        });
        println!("{:<10} final {}", v.label, line.unwrap_or_else(|| "no complete runs".into()));
    }
    for f in &report.failures {
        eprintln!("run failed: {} seed {}: {}", f.label, f.seed, f.message);
    }
}

fn finish(report: &ExperimentReport, out: &Path) -> Result<(), Failure> {
    let files = export_report(report, out).map_err(runtime_err)?;
    summarize(report);
    println!("wrote {}", files.traces_csv.parent().unwrap_or(out).display());
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(runtime_err(Error::Input(format!("{} runs failed", report.failures.len()))))
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synthetic(a) => {
            let kernel = KernelSpec::new(a.lengthscale, 1.0, a.noise_variance, a.noise_variance).map_err(config_err)?;
            let spec = SyntheticSpec {
                grid_resolution: a.grid,
                dim: a.dim,
                kernel,
                task_sizes: a.task_sizes.clone(),
                task_gaps: a.task_gaps.clone(),
            };
            spec.validate().map_err(config_err)?;
            let max_n = spec.task_sizes.iter().copied().max().unwrap_or(1);
            let vs = variants(&a.algo, kernel, max_n)?;
            for v in &vs {
                v.config.validate(spec.num_tasks()).map_err(config_err)?;
            }
            let report = run_experiment(&spec, &vs, &seeds(&a.algo)).map_err(runtime_err)?;
            finish(&report, &a.out)
        }
        Command::RunData(a) => {
            let kernel = KernelSpec::new(a.lengthscale, a.signal_variance, a.noise_variance, a.noise_variance)
                .map_err(config_err)?;
            // malformed inputs are configuration errors
            let tasks = load_meta_tasks(&a.meta_file, &kernel).map_err(config_err)?;
            let (domain, _) = load_objective(&a.objective_file).map_err(config_err)?;
            if let Some(t) = tasks.iter().find(|t| t.data().dim() != Some(domain.dim())) {
                return Err(config_err(Error::Input(format!(
                    "meta-task {} does not match the objective's input dimension {}",
                    t.id(),
                    domain.dim()
                ))));
            }
            let max_n = tasks.iter().map(|t| t.len()).max().unwrap_or(1);
            let vs = variants(&a.algo, kernel, max_n)?;
            for v in &vs {
                v.config.validate(tasks.len()).map_err(config_err)?;
            }
            let report = run_data_experiment(&a.meta_file, &a.objective_file, &kernel, &vs, &seeds(&a.algo))
                .map_err(runtime_err)?;
            finish(&report, &a.out)
        }
        Command::ExportOnly { report, out } => {
            let mut report = load_report(&report).map_err(config_err)?;
            report.recompute_aggregates();
            finish(&report, &out)
        }
        Command::Replay { manifest, out } => {
            let manifest = Manifest::load(&manifest).map_err(config_err)?;
            if manifest.library_version != env!("CARGO_PKG_VERSION") {
                eprintln!(
                    "note: manifest written by version {}, running {}",
                    manifest.library_version,
                    env!("CARGO_PKG_VERSION")
                );
            }
            let report = manifest.rerun().map_err(runtime_err)?;
            finish(&report, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
