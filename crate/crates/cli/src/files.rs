//! Run-directory layout and the estimate / CSV artifacts owned by the CLI.

use std::path::{Path, PathBuf};

use alrom::active::{IterationRecord, RunHistory};
use alrom::config::RunConfig;
use alrom::experiment::Estimate;
use alrom::fom::ParameterVector;
use alrom::io;
use alrom::reduction::ReducedBox;
use alrom::validator::PacReport;
use alrom::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.json";
pub const ESTIMATE_DIR: &str = "estimate";
pub const VALIDATOR_DIR: &str = "validator";
pub const AL_DIR: &str = "al";
pub const CONVENTIONAL_DIR: &str = "conventional";

/// Files whose presence marks a complete estimate stage.
pub const ESTIMATE_FILES: &[&str] = &[
    "estimate/estimate.json",
    "estimate/y_estimate.json",
    "estimate/y_estimate.bin",
    "estimate/basis.json",
    "estimate/basis.bin",
    "validator/validator.json",
];

pub fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::CorruptArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateMeta {
    pub config_hash: String,
    pub seed: u64,
    pub snapshots: usize,
    pub ivp_parameters: Vec<Vec<f64>>,
    pub raw_box: ReducedBox,
    pub reduced_box: ReducedBox,
    /// `None` for an unbounded side.
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    pub captured_energy: f64,
    pub validator_acceptance_rate: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn save_estimate(dir: &Path, cfg: &RunConfig, est: &Estimate, acceptance: f64) -> Result<EstimateMeta> {
    let hash = cfg.hash();
    let d = dir.join(ESTIMATE_DIR);
    io::save_snapshots(&d, "y_estimate", &est.y_estimate, &hash)?;
    io::save_basis(&d, "basis", &est.basis, &hash)?;
    let meta = EstimateMeta {
        config_hash: hash,
        seed: cfg.seed,
        snapshots: est.y_estimate.ncols(),
        ivp_parameters: est.ivp_parameters.iter().map(|p| p.0.clone()).collect(),
        raw_box: est.raw_box.clone(),
        reduced_box: est.reduced_box.clone(),
        y_min: finite(est.limits.y_min),
        y_max: finite(est.limits.y_max),
        captured_energy: est.basis.captured_energy(),
        validator_acceptance_rate: acceptance,
    };
    io::write_json(&d.join("estimate.json"), &meta)?;
    Ok(meta)
}

pub fn load_estimate(dir: &Path, cfg: &RunConfig) -> Result<(Estimate, EstimateMeta)> {
    let hash = cfg.hash();
    let d = dir.join(ESTIMATE_DIR);
    let path = d.join("estimate.json");
    let meta: EstimateMeta = io::read_json(&path)?;
    if meta.config_hash != hash {
        return Err(Error::ConfigMismatch {
            left: format!("{} ({})", path.display(), meta.config_hash),
            right: hash,
        });
    }
    let y_estimate = io::load_snapshots(&d, "y_estimate", Some(&hash))?;
    let basis = io::load_basis(&d, "basis", Some(&hash))?;
    let est = Estimate {
        limits: cfg.spaces.trim.limits(&y_estimate)?,
        y_estimate,
        ivp_parameters: meta.ivp_parameters.iter().cloned().map(ParameterVector).collect(),
        basis,
        raw_box: meta.raw_box.clone(),
        reduced_box: meta.reduced_box.clone(),
    };
    Ok((est, meta))
}

/// Formats a value for CSV; non-finite values are written as `inf`/`nan`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub const TABLE_HEADER: [&str; 4] = ["iteration", "num_samples", "one_minus_tau_bar", "p_at_design"];

pub fn write_al_table(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(TABLE_HEADER).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.samples.to_string(),
            num(r.one_minus_tau_bar),
            num(r.p_at_design),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_conventional_table(path: &Path, samples: usize, report: &PacReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(&TABLE_HEADER[1..]).map_err(|e| csv_error(path, e))?;
    w.write_record([samples.to_string(), num(report.certified_accuracy()), num(report.p_at_design)])
        .map_err(|e| csv_error(path, e))?;
    w.flush()?;
    Ok(())
}

/// Writes the empirical `τ* ↦ p(τ*)` curve.
pub fn write_curve(path: &Path, errors: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["tau", "p"]).map_err(|e| csv_error(path, e))?;
    for (tau, p) in alrom::validator::confidence_curve(errors) {
        w.write_record([num(tau), num(p)]).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Summary of a [`PacReport`]; per-test errors go to CSV, where `inf` survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub tests: usize,
    pub tau_design: f64,
    pub p_at_design: f64,
    pub count_at_design: usize,
    /// `None` when some prediction diverged.
    pub tau_bar: Option<f64>,
    pub one_minus_tau_bar: Option<f64>,
    pub eta: f64,
    pub diverged: usize,
}

impl From<&PacReport> for ReportSummary {
    fn from(r: &PacReport) -> Self {
        Self {
            tests: r.errors.len(),
            tau_design: r.tau_design,
            p_at_design: r.p_at_design,
            count_at_design: r.count_at_design,
            tau_bar: finite(r.tau_bar),
            one_minus_tau_bar: finite(r.certified_accuracy()),
            eta: r.eta,
            diverged: r.errors.iter().filter(|e| !e.is_finite()).count(),
        }
    }
}

pub fn write_report(dir: &Path, name: &str, report: &PacReport) -> Result<()> {
    io::write_json(&dir.join(format!("{name}.json")), &ReportSummary::from(report))?;
    write_curve(&dir.join(format!("{name}_curve.csv")), &report.errors)
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("iter_{iteration:02}")
}

/// History as persisted; `stop_reason` is absent for an interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFile {
    pub records: Vec<IterationRecord>,
    pub stop_reason: Option<alrom::active::StopReason>,
    pub best_iteration: Option<usize>,
    pub error: Option<String>,
}

impl From<&RunHistory> for HistoryFile {
    fn from(h: &RunHistory) -> Self {
        Self {
            records: h.records.clone(),
            stop_reason: Some(h.stop_reason),
            best_iteration: Some(h.best_iteration),
            error: None,
        }
    }
}

pub fn run_dir(cfg: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(crate::OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}
