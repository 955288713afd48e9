//! Reading meta-task and objective files, writing experiment outputs.
//!
//! Meta-task files hold one JSON object per line:
//! `{"id": 0, "inputs": [[0.1], [0.4]], "outputs": [0.3, -0.2]}`.
//! Blank lines are skipped.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::experiment::{replay, ExperimentReport, ExperimentSource, Variant};
use crate::error::{Error, Result};
use crate::gp::{Dataset, KernelSpec};
use crate::meta::MetaTask;
use crate::optimizer::{Domain, Tabulated};

fn parse_err(record: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        record,
        field: field.to_string(),
        message: message.into(),
    }
}

fn as_f64(v: &Value, record: usize, field: &str) -> Result<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(parse_err(record, field, format!("expected a finite number, got {v}"))),
    }
}

/// Parse one line of a meta-task file. `record` is the 1-based line number.
pub fn parse_meta_record(line: &str, record: usize) -> Result<(usize, Dataset)> {
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(record, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err(record, "<record>", "expected a JSON object"))?;
    let id = obj
        .get("id")
        .ok_or_else(|| parse_err(record, "id", "missing"))?
        .as_u64()
        .ok_or_else(|| parse_err(record, "id", "expected a nonnegative integer"))? as usize;
    let inputs = obj
        .get("inputs")
        .ok_or_else(|| parse_err(record, "inputs", "missing"))?
        .as_array()
        .ok_or_else(|| parse_err(record, "inputs", "expected an array of points"))?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let field = format!("inputs[{i}]");
            p.as_array()
                .ok_or_else(|| parse_err(record, &field, "expected an array of numbers"))?
                .iter()
                .map(|c| as_f64(c, record, &field))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let outputs = obj
        .get("outputs")
        .ok_or_else(|| parse_err(record, "outputs", "missing"))?
        .as_array()
        .ok_or_else(|| parse_err(record, "outputs", "expected an array of numbers"))?
        .iter()
        .map(|c| as_f64(c, record, "outputs"))
        .collect::<Result<Vec<f64>>>()?;
    if inputs.len() != outputs.len() {
        return Err(parse_err(
            record,
            "outputs",
            format!("{} outputs for {} inputs", outputs.len(), inputs.len()),
        ));
    }
    let data = Dataset::new(inputs, outputs).map_err(|e| parse_err(record, "inputs", e.to_string()))?;
    Ok((id, data))
}

/// Load every meta-task in a line-JSON file and fit its posterior.
///
/// All tasks must share one input dimension. An empty file yields no tasks.
pub fn load_meta_tasks(path: &Path, kernel: &KernelSpec) -> Result<Vec<MetaTask>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut tasks = Vec::new();
    let mut dim: Option<usize> = None;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = k + 1;
        let (id, data) = parse_meta_record(&line, record)?;
        if data.is_empty() {
            return Err(parse_err(record, "inputs", "a meta-task needs at least one point"));
        }
        match (dim, data.dim()) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::input(format!(
                    "meta-task on line {record} has dimension {b}, earlier tasks have {a}"
                )))
            }
            (None, d) => dim = d,
            _ => {}
        }
        tasks.push(MetaTask::new(id, data, kernel)?);
    }
    Ok(tasks)
}

#[derive(Serialize)]
struct MetaRecordOut<'a> {
    id: usize,
    inputs: &'a [Vec<f64>],
    outputs: &'a [f64],
}

pub fn save_meta_tasks(path: &Path, tasks: &[MetaTask]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in tasks {
        let rec = MetaRecordOut {
            id: t.id(),
            inputs: t.data().inputs(),
            outputs: t.data().outputs(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// A tabulated objective on disk. `ground_truth` marks the values as the
/// noise-free function, which enables regret reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveFile {
    pub inputs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub ground_truth: bool,
}

pub fn load_objective(path: &Path) -> Result<(Domain, Tabulated)> {
    let file: ObjectiveFile = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
    if file.inputs.len() != file.values.len() {
        return Err(Error::input(format!(
            "objective file has {} inputs and {} values",
            file.inputs.len(),
            file.values.len()
        )));
    }
    let domain = Domain::new(file.inputs)?;
    let table = if file.ground_truth {
        Tabulated::ground_truth(file.values)
    } else {
        Tabulated::lookup(file.values)
    };
    Ok((domain, table))
}

pub fn save_objective(path: &Path, objective: &ObjectiveFile) -> Result<()> {
    let w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(w, objective)?;
    Ok(())
}

/// Everything needed to rerun an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library_version: String,
    pub source: ExperimentSource,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Manifest {
    pub fn of(report: &ExperimentReport) -> Self {
        Manifest {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            source: report.source.clone(),
            variants: report.variants.clone(),
            seeds: report.seeds.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
    }

    /// Run the recorded experiment again.
    pub fn rerun(&self) -> Result<ExperimentReport> {
        replay(&self.source, &self.variants, &self.seeds)
    }
}

/// Paths written by [`export_report`].
#[derive(Clone, Debug)]
pub struct ExportedFiles {
    pub traces_csv: PathBuf,
    pub aggregates_json: PathBuf,
    pub manifest_json: PathBuf,
    pub report_json: PathBuf,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the per-iteration CSV, aggregate curves, manifest and raw report
/// into `out_dir` (created if missing).
pub fn export_report(report: &ExperimentReport, out_dir: &Path) -> Result<ExportedFiles> {
    fs::create_dir_all(out_dir)?;
    let files = ExportedFiles {
        traces_csv: out_dir.join("traces.csv"),
        aggregates_json: out_dir.join("aggregates.json"),
        manifest_json: out_dir.join("manifest.json"),
        report_json: out_dir.join("report.json"),
    };

    let m = report
        .traces
        .iter()
        .flat_map(|(_, t)| t.rows.iter().map(|r| r.weights.len()))
        .max()
        .unwrap_or(0);
    let mut csv = csv::Writer::from_path(&files.traces_csv)?;
    let mut header: Vec<String> = [
        "seed",
        "algorithm",
        "t",
        "x",
        "y",
        "inst_regret",
        "cum_regret",
        "simple_regret",
        "nu",
        "beta",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..m).map(|i| format!("omega_{i}")));
    csv.write_record(&header)?;
    for (label, trace) in &report.traces {
        for row in &trace.rows {
            let x = row.x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
            let mut rec = vec![
                trace.seed.to_string(),
                label.clone(),
                row.t.to_string(),
                x,
                row.y.to_string(),
                opt(row.inst_regret),
                opt(row.cum_regret),
                opt(row.simple_regret),
                row.nu.to_string(),
                row.beta.to_string(),
            ];
            rec.extend((0..m).map(|i| opt(row.weights.get(i).copied())));
            csv.write_record(&rec)?;
        }
    }
    csv.flush()?;

    let write_json = |path: &Path, value: &dyn erased::Json| -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        value.write(&mut w)?;
        w.flush()?;
        Ok(())
    };
    write_json(&files.aggregates_json, &report.aggregates)?;
    write_json(&files.manifest_json, &Manifest::of(report))?;
    write_json(&files.report_json, report)?;
    Ok(files)
}

mod erased {
    use std::io::Write;

    pub trait Json {
        fn write(&self, w: &mut dyn Write) -> serde_json::Result<()>;
    }

    impl<T: serde::Serialize> Json for T {
        fn write(&self, w: &mut dyn Write) -> serde_json::Result<()> {
            serde_json::to_writer_pretty(w, self)
        }
    }
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
}
