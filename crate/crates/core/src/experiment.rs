//! End-to-end pipeline stages for a [`RunConfig`].

use serde::{Deserialize, Serialize};

use crate::active::{build_pool, run_active_learning, ActiveOutcome, ActiveProblem, EennTrainer, IterationRecord};
use crate::baseline::{run_conventional, ConventionalOutcome};
use crate::config::RunConfig;
use crate::fom::{sps_sample, FullOrderModel, HeatModel, ParameterSchedule, ParameterSpace, ParameterVector};
use crate::reduction::{pod, JointSample, ReducedBasis, ReducedBox, SnapshotMatrix, TrimLimits};
use crate::rom::{lift_trajectory, rollout, trajectory_relative_error, EennRom, ReducedModel};
use crate::seeds::{stage_rng, Stage};
use crate::validator::PacValidator;
use crate::{par, Result};

/// Reduced-space estimate: snapshots, initial basis and loosened box.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub y_estimate: SnapshotMatrix,
    pub ivp_parameters: Vec<ParameterVector>,
    pub basis: ReducedBasis,
    pub raw_box: ReducedBox,
    pub reduced_box: ReducedBox,
    pub limits: TrimLimits,
}

/// Solves the constant-parameter estimate IVPs and builds `V`, `𝒴` and `𝒴*`.
pub fn estimate<F: FullOrderModel + ?Sized>(cfg: &RunConfig, fom: &F, space: &ParameterSpace) -> Result<Estimate> {
    let mut rng = stage_rng(cfg.seed, Stage::Estimate);
    let params = sps_sample(space, cfg.spaces.estimate_ivps, &mut rng);
    let grid = fom.time_grid();
    let trajectories = par::try_map_range(params.len(), |j| {
        let s = ParameterSchedule::constant(grid.t0, grid.t_end(), params[j].clone())?;
        fom.solve_ivp(&s)
    })?;
    let mut y = SnapshotMatrix::with_capacity(fom.state_dim(), params.len() * (grid.steps + 1));
    for t in &trajectories {
        y.extend(t)?;
    }
    let basis = pod(&y, cfg.spaces.n)?;
    let raw_box = ReducedBox::estimate(&y, &basis)?;
    let reduced_box = raw_box.loosen(cfg.spaces.beta)?;
    let limits = cfg.spaces.trim.limits(&y)?;
    Ok(Estimate {
        y_estimate: y,
        ivp_parameters: params,
        basis,
        raw_box,
        reduced_box,
        limits,
    })
}

/// Rejection budget per requested joint sample.
pub const ATTEMPTS_PER_SAMPLE: usize = 1000;

pub fn validator<F: FullOrderModel + ?Sized>(
    cfg: &RunConfig,
    fom: &F,
    space: &ParameterSpace,
    est: &Estimate,
) -> Result<(PacValidator, f64)> {
    let design = cfg.pac.design()?;
    let mut rng = stage_rng(cfg.seed, Stage::Pac);
    PacValidator::build(
        fom,
        space,
        &est.reduced_box,
        &est.limits,
        &est.basis,
        design,
        &mut rng,
        ATTEMPTS_PER_SAMPLE * design.s,
    )
}

pub fn pool(cfg: &RunConfig, space: &ParameterSpace, est: &Estimate) -> Result<(Vec<JointSample>, f64)> {
    let mut rng = stage_rng(cfg.seed, Stage::Pool);
    build_pool(
        &est.reduced_box,
        space,
        &est.basis,
        &est.limits,
        cfg.active.pool_size,
        &mut rng,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn train_active<F, O>(
    cfg: &RunConfig,
    fom: &F,
    space: &ParameterSpace,
    est: &Estimate,
    validator: &PacValidator,
    pool: &[JointSample],
    observer: O,
) -> Result<ActiveOutcome<EennRom>>
where
    F: FullOrderModel + ?Sized,
    O: FnMut(&IterationRecord, &EennRom, &[usize]) -> Result<()>,
{
    let problem = ActiveProblem {
        fom,
        space,
        y_estimate: &est.y_estimate,
        creation_basis: &est.basis,
        reduced_box: &est.reduced_box,
        validator,
        pool,
    };
    let mut trainer = EennTrainer {
        space: space.clone(),
        dt: fom.time_grid().dt,
        config: cfg.training.clone(),
    };
    let mut rng = stage_rng(cfg.seed, Stage::Selection);
    run_active_learning(&problem, &cfg.active_config(), &mut trainer, &mut rng, observer)
}

pub fn train_conventional<F: FullOrderModel + ?Sized>(
    cfg: &RunConfig,
    fom: &F,
    space: &ParameterSpace,
    est: &Estimate,
    validator: &PacValidator,
) -> Result<ConventionalOutcome> {
    let mut rng = stage_rng(cfg.seed, Stage::Baseline);
    run_conventional(
        fom,
        space,
        &est.y_estimate,
        cfg.baseline.ivps,
        cfg.spaces.n,
        &cfg.training,
        validator,
        cfg.pac.tau_design,
        &mut rng,
    )
}

/// A prediction scenario: a boundary schedule and cells to monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// `(time, parameters)` knots, linearly interpolated.
    pub knots: Vec<(f64, Vec<f64>)>,
    #[serde(default)]
    pub monitor: Vec<usize>,
    #[serde(default = "yes")]
    pub reference: bool,
}

fn yes() -> bool {
    true
}

impl Scenario {
    /// Every wall held at `value` for the whole horizon.
    pub fn constant(name: &str, value: f64, t0: f64, t_end: f64) -> Self {
        Self {
            name: name.into(),
            knots: vec![(t0, vec![value; 4]), (t_end, vec![value; 4])],
            monitor: Vec::new(),
            reference: true,
        }
    }

    pub fn schedule(&self) -> Result<ParameterSchedule> {
        ParameterSchedule::new(
            self.knots
                .iter()
                .map(|(t, v)| (*t, ParameterVector(v.clone())))
                .collect(),
        )
    }
}

/// Lifted ROM trajectory, and the FOM reference when requested.
pub struct Prediction {
    pub rom: SnapshotMatrix,
    pub reference: Option<SnapshotMatrix>,
    pub relative_error: Option<f64>,
    /// Whether the schedule leaves the parameter box.
    pub extrapolates: bool,
}

pub fn predict<F: FullOrderModel + ?Sized, M: ReducedModel + ?Sized>(
    rom: &M,
    fom: &F,
    space: &ParameterSpace,
    scenario: &Scenario,
) -> Result<Prediction> {
    let schedule = scenario.schedule()?;
    let grid = fom.time_grid();
    let y0 = rom.basis().project(&fom.initial_state())?;
    let traj = rollout(rom, &y0, &schedule, &grid, grid.steps)?;
    let lifted = lift_trajectory(rom.basis(), &traj)?;
    let (reference, relative_error) = if scenario.reference {
        let y_ref = fom.solve_ivp(&schedule)?;
        let e = trajectory_relative_error(&lifted, &y_ref)?;
        (Some(y_ref), Some(e))
    } else {
        (None, None)
    };
    Ok(Prediction {
        rom: lifted,
        reference,
        relative_error,
        extrapolates: !schedule.within(space),
    })
}

/// Heat model for `cfg`.
pub fn heat_model(cfg: &RunConfig) -> Result<HeatModel> {
    HeatModel::new(cfg.fom.clone())
}
