//! Robust meta-learned Bayesian optimization.
//!
//! A target function is optimized with GP-UCB or Thompson sampling while a
//! set of related meta-tasks, each summarized by its own GP posterior, is
//! blended into the acquisition. Per-task weights come from
//! follow-the-regularized-leader on estimated gap losses and the overall
//! reliance on meta-data, `ν`, decays as the estimated gaps grow.
//!
//! ```no_run
//! use rmbo::bench::{run_experiment, SyntheticSpec, Variant};
//! use rmbo::{Algorithm, MetaConfig, RunConfig};
//!
//! let spec = SyntheticSpec::standard();
//! let cfg = RunConfig::new(Algorithm::RmGpUcb, 50, spec.kernel, MetaConfig::default(), 0);
//! let report = run_experiment(&spec, &[Variant::new("rm", cfg)], &[0, 1, 2]).unwrap();
//! println!("{:?}", report.curve("rm", "simple_regret"));
//! ```

pub mod acquisition;
pub mod bench;
pub mod error;
pub mod gp;
pub mod meta;
pub mod optimizer;
pub mod rng;

pub use acquisition::{
    beta_t, blend_ucb, build_rff_sampler, sample_function, tau, ts_select, ucb_acquisition, ucb_select,
    ConfidenceParams, RffSampler, SampledFunction, TsChoice,
};
pub use error::{Error, Result};
pub use gp::{fit, kernel_eval, log_marginal_likelihood, Dataset, GpPosterior, JitterMode, KernelSpec};
pub use meta::{
    estimate_gap_bound, ftrl_update, loss_vector, nu_update, step_meta_state, GapBound, GapMode, LossForm,
    MetaConfig, MetaState, MetaTask, NuSchedule, WeightRule,
};
pub use optimizer::{
    cumulative_regret, run, simple_regret, Algorithm, BetaSchedule, Domain, Objective, RegretTrace, RunConfig,
    Tabulated, TraceRow,
};
