//! Greedy active learning of one-step snapshots.
//!
//! Each iteration trains a ROM on the snapshots acquired so far, evaluates it
//! on the PAC validator, fits a Gaussian process to the validator errors and
//! acquires the `Δs` pool entries with the largest predicted error. The
//! reduced basis is recomputed from the estimate snapshots plus every
//! acquired FOM output before retraining.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::tune_and_fit;
use crate::fom::{FullOrderModel, FullState, ParameterSpace};
use crate::normalize::InputNormalizer;
use crate::reduction::{pod, sample_joint, JointSample, ReducedBasis, ReducedBox, SnapshotMatrix, TrimLimits};
use crate::rom::{train_eenn, EennRom, ReducedModel, TrainingConfig, TrainingReport, TrainingSet};
use crate::seeds::{derive_seed, Stage};
use crate::validator::{PacReport, PacValidator};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    pub pool_size: usize,
    /// Snapshots acquired per iteration.
    pub delta_s: usize,
    /// Design error level `τ̄*_design`.
    pub tau_design: f64,
    /// Stop once `|τ̄* − τ̄*_old|` falls below this.
    pub delta_tau_tol: f64,
    pub max_iterations: usize,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            pool_size: 40_000,
            delta_s: 500,
            tau_design: 0.01,
            delta_tau_tol: 1e-4,
            max_iterations: 20,
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("active.{m}")));
        if self.delta_s == 0 || self.max_iterations == 0 {
            return bad("delta_s and max_iterations must be positive");
        }
        if self.pool_size < self.delta_s {
            return bad("pool_size must be at least delta_s");
        }
        if !(self.tau_design > 0.0 && self.tau_design < 1.0) {
            return bad("tau_design must lie in (0, 1)");
        }
        if !(self.delta_tau_tol > 0.0) {
            return bad("delta_tau_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetMet,
    ImprovementStalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub best_validation_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

impl From<&TrainingReport> for TrainingSummary {
    fn from(r: &TrainingReport) -> Self {
        Self {
            best_validation_loss: r.best_validation_loss,
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub samples: usize,
    pub one_minus_tau_bar: f64,
    pub p_at_design: f64,
    pub count_at_design: usize,
    pub training: Option<TrainingSummary>,
    /// Leading singular values of the basis used for this iteration.
    pub singular_values: Vec<f64>,
    pub captured_energy: f64,
    /// GP lengthscale fitted on this iteration's errors, if a selection followed.
    pub gp_lengthscale: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// 1-based iteration whose ROM is returned.
    pub best_iteration: usize,
}

/// Draws the candidate pool from the joint space.
pub fn build_pool<R: Rng + ?Sized>(
    reduced_box: &ReducedBox,
    space: &ParameterSpace,
    basis: &ReducedBasis,
    limits: &TrimLimits,
    pool_size: usize,
    rng: &mut R,
) -> Result<(Vec<JointSample>, f64)> {
    let draw = sample_joint(reduced_box, space, basis, limits, pool_size, rng, 1000 * pool_size)?;
    let rate = draw.acceptance_rate();
    Ok((draw.samples, rate))
}

/// Indices of the `delta_s` highest `scores` among unselected entries,
/// ties going to the lower index. NaN scores rank last.
pub fn select_greedy(scores: &[f64], selected: &[bool], delta_s: usize) -> Result<Vec<usize>> {
    if scores.len() != selected.len() {
        return Err(Error::dim("selection mask", scores.len(), selected.len()));
    }
    let mut free: Vec<usize> = (0..scores.len()).filter(|&i| !selected[i]).collect();
    if free.len() < delta_s {
        return Err(Error::PoolExhausted {
            requested: delta_s,
            remaining: free.len(),
        });
    }
    let key = |i: usize| if scores[i].is_nan() { f64::NEG_INFINITY } else { scores[i] };
    free.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    free.truncate(delta_s);
    Ok(free)
}

/// Runs one FOM step from each sample; returns `(lifted input, output)` pairs
/// in selection order.
pub fn acquire<F: FullOrderModel + ?Sized>(
    fom: &F,
    creation_basis: &ReducedBasis,
    selection: &[&JointSample],
) -> Result<Vec<(FullState, FullState)>> {
    let dt = fom.time_grid().dt;
    par::try_map_range(selection.len(), |i| {
        let lifted = selection[i].lifted_input(creation_basis)?;
        let out = fom.step(&lifted, &selection[i].mu, dt)?;
        Ok((lifted, out))
    })
}

/// POD of the estimate snapshots together with all acquired outputs.
pub fn refresh_basis(y_estimate: &SnapshotMatrix, outputs: &SnapshotMatrix, n: usize) -> Result<ReducedBasis> {
    let mut all = y_estimate.clone();
    all.extend(outputs)?;
    pod(&all, n)
}

/// Builds a ROM from the current basis and training set.
pub trait RomTrainer {
    type Rom: ReducedModel;

    fn train(
        &mut self,
        basis: &ReducedBasis,
        data: &TrainingSet,
        iteration: usize,
    ) -> Result<(Self::Rom, Option<TrainingReport>)>;
}

/// Fresh EENN per iteration, seeded from the iteration index.
pub struct EennTrainer {
    pub space: ParameterSpace,
    pub dt: f64,
    pub config: TrainingConfig,
}

impl RomTrainer for EennTrainer {
    type Rom = EennRom;

    fn train(
        &mut self,
        basis: &ReducedBasis,
        data: &TrainingSet,
        iteration: usize,
    ) -> Result<(EennRom, Option<TrainingReport>)> {
        let cfg = TrainingConfig {
            seed: derive_seed(self.config.seed, Stage::Training, iteration as u64),
            ..self.config.clone()
        };
        let (rom, report) = train_eenn(basis, data, &self.space, self.dt, &cfg)?;
        Ok((rom, Some(report)))
    }
}

/// Everything fixed before the loop starts.
pub struct ActiveProblem<'a, F: FullOrderModel + ?Sized> {
    pub fom: &'a F,
    pub space: &'a ParameterSpace,
    pub y_estimate: &'a SnapshotMatrix,
    /// Basis the pool and validator samples were drawn with.
    pub creation_basis: &'a ReducedBasis,
    /// Loosened reduced box, used to normalize estimator inputs.
    pub reduced_box: &'a ReducedBox,
    pub validator: &'a PacValidator,
    pub pool: &'a [JointSample],
}

pub struct ActiveOutcome<R> {
    pub rom: R,
    pub report: PacReport,
    pub history: RunHistory,
    /// Pool indices in acquisition order.
    pub selected: Vec<usize>,
    pub training_set: TrainingSet,
    pub basis: ReducedBasis,
}

/// Normalized `[y_r, μ]` rows for the estimator.
fn estimator_inputs(samples: &[JointSample], normalizer: &InputNormalizer) -> Result<Vec<f64>> {
    let dim = normalizer.dim();
    let mut out = vec![0.0; samples.len() * dim];
    for (s, row) in samples.iter().zip(out.chunks_mut(dim)) {
        normalizer.apply_joint(&s.y_r, &s.mu, row)?;
    }
    Ok(out)
}

/// Errors of diverged predictions are replaced by twice the largest finite
/// error (or 1) so the estimator can still be fitted.
fn finite_errors(errors: &[f64]) -> Vec<f64> {
    let cap = errors
        .iter()
        .copied()
        .filter(|e| e.is_finite())
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))))
        .map_or(1.0, |m| 2.0 * m);
    errors.iter().map(|&e| if e.is_finite() { e } else { cap }).collect()
}

fn record<R: ReducedModel>(
    iteration: usize,
    samples: usize,
    report: &PacReport,
    training: &Option<TrainingReport>,
    rom: &R,
    started: Instant,
) -> IterationRecord {
    let basis = rom.basis();
    IterationRecord {
        iteration,
        samples,
        one_minus_tau_bar: report.certified_accuracy(),
        p_at_design: report.p_at_design,
        count_at_design: report.count_at_design,
        training: training.as_ref().map(TrainingSummary::from),
        singular_values: basis.singular_values().iter().take(basis.n() + 1).copied().collect(),
        captured_energy: basis.captured_energy(),
        gp_lengthscale: None,
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

/// Runs the loop. `observer` sees every finished iteration together with
/// its ROM and the selection so far; an observer error aborts the run.
pub fn run_active_learning<F, T, R, O>(
    problem: &ActiveProblem<'_, F>,
    cfg: &ActiveConfig,
    trainer: &mut T,
    rng: &mut R,
    mut observer: O,
) -> Result<ActiveOutcome<T::Rom>>
where
    F: FullOrderModel + ?Sized,
    T: RomTrainer,
    R: Rng + ?Sized,
    O: FnMut(&IterationRecord, &T::Rom, &[usize]) -> Result<()>,
{
    cfg.validate()?;
    let pool = problem.pool;
    if pool.len() < cfg.delta_s {
        return Err(Error::PoolExhausted {
            requested: cfg.delta_s,
            remaining: pool.len(),
        });
    }
    let n = problem.creation_basis.n();
    let rows = problem.fom.state_dim();

    let mut lower = problem.reduced_box.lower.clone();
    let mut upper = problem.reduced_box.upper.clone();
    lower.extend_from_slice(problem.space.lower());
    upper.extend_from_slice(problem.space.upper());
    let normalizer = InputNormalizer::from_bounds(&lower, &upper)?;
    let gp_dim = normalizer.dim();
    let pac_points = estimator_inputs(&problem.validator.samples, &normalizer)?;
    let pool_points = estimator_inputs(pool, &normalizer)?;

    let mut is_selected = vec![false; pool.len()];
    let mut selected: Vec<usize> = Vec::new();
    let mut data = TrainingSet::new(rows);
    let mut outputs = SnapshotMatrix::new(rows);
    let mut basis = problem.creation_basis.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut best: Option<(T::Rom, PacReport, usize)> = None;
    let mut tau_old = f64::NAN;
    let mut stop = StopReason::MaxIterations;

    let mut new_indices: Vec<usize> = rand::seq::index::sample(rng, pool.len(), cfg.delta_s).into_vec();
    for iteration in 1..=cfg.max_iterations {
        let started = Instant::now();
        let batch: Vec<&JointSample> = new_indices.iter().map(|&i| &pool[i]).collect();
        for (pair, &i) in acquire(problem.fom, problem.creation_basis, &batch)?
            .into_iter()
            .zip(&new_indices)
        {
            data.push(&pair.0, pool[i].mu.clone(), &pair.1)?;
            outputs.push(&pair.1)?;
            is_selected[i] = true;
            selected.push(i);
        }
        if iteration > 1 {
            basis = refresh_basis(problem.y_estimate, &outputs, n)?;
        }

        let (rom, training) = trainer.train(&basis, &data, iteration)?;
        let report = problem.validator.evaluate(&rom, cfg.tau_design)?;
        let mut rec = record(iteration, selected.len(), &report, &training, &rom, started);
        log::info!(
            "iteration {iteration}: {} samples, 1 - tau_bar = {:.4}, p = {:.4}",
            rec.samples,
            rec.one_minus_tau_bar,
            rec.p_at_design
        );

        let done = if report.p_at_design >= 1.0 {
            Some(StopReason::TargetMet)
        } else if iteration > 1 && (report.tau_bar - tau_old).abs() < cfg.delta_tau_tol {
            Some(StopReason::ImprovementStalled)
        } else if iteration == cfg.max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        tau_old = report.tau_bar;

        if done.is_none() {
            let errors = finite_errors(&report.errors);
            let (gp, tuned) = tune_and_fit(&pac_points, gp_dim, &errors)?;
            rec.gp_lengthscale = Some(tuned.params.l);
            let scores = gp.predict_batch(&pool_points)?;
            new_indices = select_greedy(&scores, &is_selected, cfg.delta_s)?;
            rec.wall_seconds = started.elapsed().as_secs_f64();
        }
        observer(&rec, &rom, &selected)?;
        records.push(rec);

        let better = best.as_ref().is_none_or(|(_, b, _)| report.tau_bar < b.tau_bar);
        if better {
            best = Some((rom, report, iteration));
        }
        if let Some(reason) = done {
            stop = reason;
            break;
        }
    }

    let (rom, report, best_iteration) = best.expect("at least one iteration runs");
    Ok(ActiveOutcome {
        rom,
        report,
        history: RunHistory {
            records,
            stop_reason: stop,
            best_iteration,
        },
        selected,
        training_set: data,
        basis,
    })
}
