//! Benchmark harness: synthetic instances, multi-seed experiments and file I/O.

pub mod experiment;
pub mod io;
pub mod synthetic;

pub use experiment::{
    mean_stderr, replay, run_data_experiment, run_experiment, Curve, ExperimentReport, ExperimentSource, RunFailure,
    Variant,
};
pub use io::{
    export_report, load_meta_tasks, load_objective, load_report, save_meta_tasks, save_objective, ExportedFiles,
    Manifest, ObjectiveFile,
};
pub use synthetic::{generate_instance, make_meta_task, sample_target_function, SyntheticInstance, SyntheticSpec};
