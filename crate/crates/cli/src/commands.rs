use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use alrom::config::RunConfig;
use alrom::experiment::{self, Estimate, Scenario};
use alrom::fom::{FullOrderModel, HeatModel};
use alrom::io;
use alrom::reduction::SnapshotMatrix;
use alrom::validator::PacValidator;
use alrom::{Error, Result};
use log::{info, warn};
use serde_json::json;

use crate::files::{self, HistoryFile, ReportSummary};
use crate::Mode;

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

/// Reads a TOML (or, by extension, JSON) file into `T`.
fn read_structured<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(vec![path.to_path_buf()]));
    }
    let text = fs::read_to_string(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = read_structured(path)?;
    cfg.validate()?;
    Ok(cfg)
}

struct Setup {
    cfg: RunConfig,
    dir: PathBuf,
    fom: HeatModel,
    space: alrom::fom::ParameterSpace,
}

fn setup(config: &Path, out: Option<PathBuf>) -> Result<Setup> {
    let cfg = load_config(config)?;
    let dir = files::run_dir(&cfg, out);
    fs::create_dir_all(&dir)?;
    let existing = dir.join(files::CONFIG_FILE);
    if existing.exists() {
        let prev: RunConfig = io::read_json(&existing)?;
        if prev.hash() != cfg.hash() {
            return Err(Error::ConfigMismatch {
                left: format!("{} ({})", existing.display(), prev.hash()),
                right: cfg.hash(),
            });
        }
    }
    io::write_json(&existing, &cfg)?;
    let fom = experiment::heat_model(&cfg)?;
    let space = cfg.space()?;
    Ok(Setup { cfg, dir, fom, space })
}

fn run_estimate(s: &Setup) -> Result<(Estimate, PacValidator, files::EstimateMeta)> {
    let t = Instant::now();
    let est = experiment::estimate(&s.cfg, &s.fom, &s.space)?;
    info!("estimated reduced space from {} snapshots in {:.1?}", est.y_estimate.ncols(), t.elapsed());
    let (validator, rate) = experiment::validator(&s.cfg, &s.fom, &s.space, &est)?;
    info!("validator: {} tests, trim acceptance {rate:.4}, {:.1?}", validator.len(), t.elapsed());
    let meta = files::save_estimate(&s.dir, &s.cfg, &est, rate)?;
    io::save_validator(&s.dir.join(files::VALIDATOR_DIR), &validator, &s.cfg.hash())?;
    Ok((est, validator, meta))
}

/// Loads the estimate stage, producing it if none exists yet.
fn estimate_stage(s: &Setup) -> Result<(Estimate, PacValidator, files::EstimateMeta)> {
    if !io::missing(&s.dir, files::ESTIMATE_FILES).is_empty() {
        info!("estimate artifacts not found in {}; producing them", s.dir.display());
        return run_estimate(s);
    }
    let (est, meta) = files::load_estimate(&s.dir, &s.cfg)?;
    let validator = io::load_validator(&s.dir.join(files::VALIDATOR_DIR), Some(&s.cfg.hash()))?;
    Ok((est, validator, meta))
}

fn estimate_summary(dir: &Path, est: &Estimate, meta: &files::EstimateMeta, tests: usize) -> serde_json::Value {
    let widths = est.reduced_box.widths();
    json!({
        "run_dir": dir,
        "snapshots": est.y_estimate.ncols(),
        "singular_values": est.basis.singular_values(),
        "captured_energy": meta.captured_energy,
        "box_widths": widths,
        "beta": est.reduced_box.beta,
        "trim_limits": [meta.y_min, meta.y_max],
        "trim_acceptance_rate": meta.validator_acceptance_rate,
        "validator_tests": tests,
    })
}

pub fn estimate(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let s = setup(config, out)?;
    let (est, validator, meta) = run_estimate(&s)?;
    print_json(&estimate_summary(&s.dir, &est, &meta, validator.len()));
    Ok(())
}

pub fn train(config: &Path, mode: Mode, out: Option<PathBuf>) -> Result<()> {
    let s = setup(config, out)?;
    let (est, validator, _) = estimate_stage(&s)?;
    match mode {
        Mode::Al => train_al(&s, &est, &validator),
        Mode::Conventional => train_conventional(&s, &est, &validator),
    }
}

fn train_al(s: &Setup, est: &Estimate, validator: &PacValidator) -> Result<()> {
    let hash = s.cfg.hash();
    let dir = s.dir.join(files::AL_DIR);
    fs::create_dir_all(&dir)?;
    let t = Instant::now();
    let (pool, rate) = experiment::pool(&s.cfg, &s.space, est)?;
    info!("pool: {} joint samples, acceptance {rate:.4}, {:.1?}", pool.len(), t.elapsed());
    io::save_joint_samples(&dir, "pool", &pool, &hash)?;

    let mut records = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let history_path = dir.join("history.json");
    let table_path = dir.join("table.csv");
    let outcome = experiment::train_active(&s.cfg, &s.fom, &s.space, est, validator, &pool, |rec, rom, selected| {
        info!(
            "iteration {}: {} samples, 1-tau_bar {:.4}, p {:.4}",
            rec.iteration, rec.samples, rec.one_minus_tau_bar, rec.p_at_design
        );
        io::save_rom(&dir, &files::checkpoint_name(rec.iteration), rom, &hash, serde_json::to_value(rec)?)?;
        records.push(rec.clone());
        order = selected.to_vec();
        io::write_json(
            &history_path,
            &HistoryFile {
                records: records.clone(),
                stop_reason: None,
                best_iteration: None,
                error: None,
            },
        )?;
        files::write_al_table(&table_path, &records)
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            io::write_json(
                &history_path,
                &HistoryFile {
                    records,
                    stop_reason: None,
                    best_iteration: None,
                    error: Some(e.to_string()),
                },
            )?;
            return Err(e);
        }
    };
    let history = &outcome.history;
    io::write_json(&history_path, &HistoryFile::from(history))?;
    files::write_al_table(&table_path, &history.records)?;
    io::write_json(
        &dir.join("selections.json"),
        &json!({
            "order": outcome.selected,
            "samples_per_iteration": history.records.iter().map(|r| r.samples).collect::<Vec<_>>(),
        }),
    )?;
    let best = serde_json::to_value(&history.records[history.best_iteration - 1])?;
    io::save_rom(&dir, "rom", &outcome.rom, &hash, best)?;
    files::write_report(&dir, "report", &outcome.report)?;
    print_json(&json!({
        "mode": "al",
        "rom": dir.join("rom.json"),
        "iterations": history.records.len(),
        "stop_reason": history.stop_reason,
        "best_iteration": history.best_iteration,
        "report": ReportSummary::from(&outcome.report),
    }));
    Ok(())
}

fn train_conventional(s: &Setup, est: &Estimate, validator: &PacValidator) -> Result<()> {
    let hash = s.cfg.hash();
    let dir = s.dir.join(files::CONVENTIONAL_DIR);
    fs::create_dir_all(&dir)?;
    let out = experiment::train_conventional(&s.cfg, &s.fom, &s.space, est, validator)?;
    let training = json!({
        "training_pairs": out.training_pairs,
        "ivps": s.cfg.baseline.ivps,
        "best_validation_loss": out.training.best_validation_loss,
        "epochs_run": out.training.epochs_run,
    });
    io::save_rom(&dir, "rom", &out.rom, &hash, training)?;
    files::write_report(&dir, "report", &out.report)?;
    files::write_conventional_table(&dir.join("table.csv"), out.training_pairs, &out.report)?;
    print_json(&json!({
        "mode": "conventional",
        "rom": dir.join("rom.json"),
        "training_pairs": out.training_pairs,
        "report": ReportSummary::from(&out.report),
    }));
    Ok(())
}

/// Splits `dir/NAME.json` into `(dir, NAME)`.
fn rom_location(rom: &Path) -> Result<(PathBuf, String)> {
    let name = rom
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("--rom: not a file name: {}", rom.display())))?;
    let dir = rom.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, name.to_string()))
}

pub fn validate(rom: &Path, validator_dir: &Path, tau: f64, out: Option<PathBuf>) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("--tau: must lie in (0, 1), got {tau}")));
    }
    let (dir, name) = rom_location(rom)?;
    let (model, meta) = io::load_rom(&dir, &name, None)?;
    let validator = io::load_validator(validator_dir, Some(&meta.config_hash))?;
    if validator.inputs.nrows() != meta.state_dim {
        return Err(Error::DimensionMismatch {
            context: "validator state dimension",
            expected: meta.state_dim,
            actual: validator.inputs.nrows(),
        });
    }
    let report = validator.evaluate(&model, tau)?;
    let out = out.unwrap_or(dir);
    let stem = format!("{name}_validation");
    files::write_report(&out, &stem, &report)?;
    print_json(&json!({
        "report": out.join(format!("{stem}.json")),
        "curve": out.join(format!("{stem}_curve.csv")),
        "summary": ReportSummary::from(&report),
    }));
    Ok(())
}

/// Nearest ancestor of `start` holding a run `config.json`.
fn find_run_config(start: &Path) -> Option<PathBuf> {
    start
        .ancestors()
        .map(|d| d.join(files::CONFIG_FILE))
        .find(|p| p.exists())
}

pub fn predict(rom: &Path, scenario_path: &Path, config: Option<PathBuf>, out: &Path) -> Result<()> {
    let (dir, name) = rom_location(rom)?;
    let (model, meta) = io::load_rom(&dir, &name, None)?;
    let cfg = match config {
        Some(p) => load_config(&p)?,
        None => {
            let p = find_run_config(&dir).ok_or_else(|| {
                Error::MissingArtifact(vec![dir.join(files::CONFIG_FILE)])
            })?;
            let cfg: RunConfig = io::read_json(&p)?;
            cfg.validate()?;
            cfg
        }
    };
    let fom = experiment::heat_model(&cfg)?;
    if fom.state_dim() != meta.state_dim || (fom.time_grid().dt - meta.dt).abs() > 1e-12 * meta.dt.abs() {
        return Err(Error::Config(format!(
            "the configured model (state {}, dt {}) does not match the ROM (state {}, dt {})",
            fom.state_dim(),
            fom.time_grid().dt,
            meta.state_dim,
            meta.dt
        )));
    }
    let scenario: Scenario = read_structured(scenario_path)?;
    if let Some(&bad) = scenario.monitor.iter().find(|&&c| c >= fom.state_dim()) {
        return Err(Error::Config(format!("monitor: cell {bad} outside 0..{}", fom.state_dim())));
    }
    let space = cfg.space()?;
    let pred = experiment::predict(&model, &fom, &space, &scenario)?;
    if pred.extrapolates {
        warn!("scenario '{}' leaves the parameter box; the prediction extrapolates", scenario.name);
    }
    fs::create_dir_all(out)?;
    let grid = fom.time_grid();
    write_trajectory(&out.join("trajectory.csv"), &scenario.monitor, &pred.rom, pred.reference.as_ref(), |i| {
        grid.time(i)
    })?;
    let mut written = vec![out.join("trajectory.csv")];
    if let (Some(reference), false) = (&pred.reference, scenario.monitor.is_empty()) {
        let path = out.join("error_field.csv");
        write_error_field(&path, &fom, &pred.rom, reference)?;
        written.push(path);
    }
    let summary = json!({
        "scenario": scenario.name,
        "rom": rom,
        "steps": grid.steps,
        "relative_error": pred.relative_error,
        "extrapolates": pred.extrapolates,
        "files": written,
    });
    io::write_json(&out.join("summary.json"), &summary)?;
    print_json(&summary);
    Ok(())
}

fn write_trajectory(
    path: &Path,
    monitor: &[usize],
    rom: &SnapshotMatrix,
    reference: Option<&SnapshotMatrix>,
    time: impl Fn(usize) -> f64,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| files::csv_error(path, e))?;
    let mut header = vec!["time".to_string(), "rom_mean".to_string()];
    if reference.is_some() {
        header.push("reference_mean".into());
    }
    for c in monitor {
        header.push(format!("rom_{c}"));
        if reference.is_some() {
            header.push(format!("reference_{c}"));
        }
    }
    w.write_record(&header).map_err(|e| files::csv_error(path, e))?;
    let mean = |col: &[f64]| col.iter().sum::<f64>() / col.len() as f64;
    for i in 0..rom.ncols() {
        let r = rom.column(i);
        let f = reference.map(|m| m.column(i));
        let mut row = vec![files::num(time(i)), files::num(mean(r))];
        if let Some(f) = f {
            row.push(files::num(mean(f)));
        }
        for &c in monitor {
            row.push(files::num(r[c]));
            if let Some(f) = f {
                row.push(files::num(f[c]));
            }
        }
        w.write_record(&row).map_err(|e| files::csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Absolute ROM error over the whole plate at the final time.
fn write_error_field(path: &Path, fom: &HeatModel, rom: &SnapshotMatrix, reference: &SnapshotMatrix) -> Result<()> {
    let last = rom.ncols() - 1;
    let (r, f) = (rom.column(last), reference.column(last));
    let mut w = csv::Writer::from_path(path).map_err(|e| files::csv_error(path, e))?;
    w.write_record(["ix", "iy", "rom", "reference", "abs_error"])
        .map_err(|e| files::csv_error(path, e))?;
    for iy in 0..fom.grid() {
        for ix in 0..fom.grid() {
            let k = fom.cell_index(ix, iy);
            w.write_record([
                ix.to_string(),
                iy.to_string(),
                files::num(r[k]),
                files::num(f[k]),
                files::num((r[k] - f[k]).abs()),
            ])
            .map_err(|e| files::csv_error(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| files::csv_error(path, e))?;
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| files::csv_error(path, e))
        })
        .collect()
}

pub fn report(run: &Path) -> Result<()> {
    let required = ["config.json", "estimate/estimate.json", "validator/validator.json"];
    let mut absent = io::missing(run, &required);
    let has_al = run.join("al/table.csv").exists();
    let has_conv = run.join("conventional/table.csv").exists();
    if !has_al && !has_conv {
        absent.extend(io::missing(run, &["al/table.csv", "conventional/table.csv"]));
    }
    if !absent.is_empty() {
        return Err(Error::MissingArtifact(absent));
    }
    let cfg: RunConfig = io::read_json(&run.join(files::CONFIG_FILE))?;
    let meta: files::EstimateMeta = io::read_json(&run.join("estimate/estimate.json"))?;
    let basis = io::load_basis(&run.join(files::ESTIMATE_DIR), "basis", Some(&meta.config_hash))?;
    let bundle = run.join("report");
    fs::create_dir_all(&bundle)?;

    let mut md = String::new();
    let _ = writeln!(md, "# Run report\n");
    let _ = writeln!(md, "- root seed: {}", cfg.seed);
    let _ = writeln!(md, "- config hash: `{}`", meta.config_hash);
    let _ = writeln!(md, "- reduced dimension: {}", cfg.spaces.n);
    let _ = writeln!(md, "- estimate snapshots: {}", meta.snapshots);
    let _ = writeln!(md, "- captured energy: {:.6}", meta.captured_energy);
    let _ = writeln!(md, "- box expansion ratio: {}", meta.reduced_box.beta);
    let _ = writeln!(md, "- trim limits: {:?} .. {:?}", meta.y_min, meta.y_max);
    let _ = writeln!(md, "- validator trim acceptance rate: {:.6}", meta.validator_acceptance_rate);
    let _ = writeln!(
        md,
        "- PAC design: epsilon {}, sigma {}, tau_design {}",
        cfg.pac.epsilon, cfg.pac.sigma, cfg.pac.tau_design
    );

    let spectrum = bundle.join("spectrum.csv");
    {
        let mut w = csv::Writer::from_path(&spectrum).map_err(|e| files::csv_error(&spectrum, e))?;
        w.write_record(["index", "singular_value"])
            .map_err(|e| files::csv_error(&spectrum, e))?;
        for (i, s) in basis.singular_values().iter().enumerate() {
            w.write_record([(i + 1).to_string(), files::num(*s)])
                .map_err(|e| files::csv_error(&spectrum, e))?;
        }
        w.flush()?;
    }
    let _ = writeln!(md, "\nSingular-value spectrum of the estimate snapshots: `report/spectrum.csv`.");

    if has_al {
        let rows = read_table(&run.join("al/table.csv"))?;
        fs::copy(run.join("al/table.csv"), bundle.join("al_convergence.csv"))?;
        let history: serde_json::Value = io::read_json(&run.join("al/history.json"))?;
        let _ = writeln!(md, "\n## Active learning\n");
        let _ = writeln!(md, "| iteration | samples | 1 - tau_bar | p(tau_design) | checkpoint |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for r in &rows {
            let it: usize = r[0]
                .parse()
                .map_err(|_| Error::CorruptArtifact { path: run.join("al/table.csv"), reason: format!("bad iteration '{}'", r[0]) })?;
            let ckpt = format!("al/{}.json", files::checkpoint_name(it));
            let mark = if run.join(&ckpt).exists() { ckpt } else { format!("{ckpt} (missing)") };
            let _ = writeln!(md, "| {} | {} | {} | {} | `{}` |", r[0], r[1], r[2], r[3], mark);
        }
        let _ = writeln!(md, "\n- stop reason: {}", history["stop_reason"]);
        let _ = writeln!(md, "- best iteration: {}", history["best_iteration"]);
        if let Some(e) = history["error"].as_str() {
            let _ = writeln!(md, "- run failed: {e}");
        }
        let spectra = bundle.join("al_spectra.csv");
        let mut w = csv::Writer::from_path(&spectra).map_err(|e| files::csv_error(&spectra, e))?;
        w.write_record(["iteration", "index", "singular_value"])
            .map_err(|e| files::csv_error(&spectra, e))?;
        for rec in history["records"].as_array().into_iter().flatten() {
            let it = rec["iteration"].as_u64().unwrap_or(0);
            for (i, s) in rec["singular_values"].as_array().into_iter().flatten().enumerate() {
                let s = s.as_f64().map_or("nan".into(), files::num);
                w.write_record([it.to_string(), (i + 1).to_string(), s])
                    .map_err(|e| files::csv_error(&spectra, e))?;
            }
        }
        w.flush()?;
        let _ = writeln!(md, "\nConvergence table: `report/al_convergence.csv`; per-iteration spectra: `report/al_spectra.csv`.");
    }
    if has_conv {
        let rows = read_table(&run.join("conventional/table.csv"))?;
        fs::copy(run.join("conventional/table.csv"), bundle.join("conventional.csv"))?;
        let _ = writeln!(md, "\n## Conventional workflow\n");
        let _ = writeln!(md, "| samples | 1 - tau_bar | p(tau_design) |");
        let _ = writeln!(md, "|---|---|---|");
        for r in &rows {
            let _ = writeln!(md, "| {} | {} | {} |", r[0], r[1], r[2]);
        }
    }
    let path = run.join("report.md");
    fs::write(&path, &md)?;
    print_json(&json!({ "report": path, "bundle": bundle }));
    Ok(())
}
