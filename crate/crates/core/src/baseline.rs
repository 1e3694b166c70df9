//! The conventional workflow: train on consecutive states of randomized
//! full trajectories and validate on the same PAC validator.

use rand::Rng;

use crate::fom::{dps_schedule, FullOrderModel, ParameterSpace};
use crate::reduction::{pod, ReducedBasis, SnapshotMatrix};
use crate::rom::{train_eenn, EennRom, TrainingConfig, TrainingReport, TrainingSet};
use crate::seeds::{derive_seed, Stage};
use crate::validator::{PacReport, PacValidator};
use crate::{par, Result};

pub struct ConventionalOutcome {
    pub rom: EennRom,
    pub report: PacReport,
    pub training: TrainingReport,
    pub basis: ReducedBasis,
    pub training_pairs: usize,
}

/// Solves `m` DPS trajectories and returns their consecutive-state pairs
/// (with `μ_i` taken at the left end of each step) and all trajectory states.
pub fn dps_training_set<F, R>(
    fom: &F,
    space: &ParameterSpace,
    m: usize,
    rng: &mut R,
) -> Result<(TrainingSet, SnapshotMatrix)>
where
    F: FullOrderModel + ?Sized,
    R: Rng + ?Sized,
{
    let grid = fom.time_grid();
    let schedules = (0..m)
        .map(|_| dps_schedule(space, &grid, rng))
        .collect::<Result<Vec<_>>>()?;
    let trajectories = par::try_map_range(m, |j| fom.solve_ivp(&schedules[j]))?;
    let rows = fom.state_dim();
    let mut set = TrainingSet::new(rows);
    let mut states = SnapshotMatrix::with_capacity(rows, m * (grid.steps + 1));
    for (traj, sched) in trajectories.iter().zip(&schedules) {
        for i in 0..grid.steps {
            set.push(traj.column(i), sched.eval(grid.time(i)), traj.column(i + 1))?;
        }
        states.extend(traj)?;
    }
    Ok((set, states))
}

/// Trains an EENN of dimension `n` on `m_ivps` DPS trajectories, with the POD
/// basis computed from those trajectories together with `y_estimate`, and
/// evaluates it on `validator`.
#[allow(clippy::too_many_arguments)]
pub fn run_conventional<F, R>(
    fom: &F,
    space: &ParameterSpace,
    y_estimate: &SnapshotMatrix,
    m_ivps: usize,
    n: usize,
    training: &TrainingConfig,
    validator: &PacValidator,
    tau_design: f64,
    rng: &mut R,
) -> Result<ConventionalOutcome>
where
    F: FullOrderModel + ?Sized,
    R: Rng + ?Sized,
{
    if m_ivps == 0 {
        return Err(crate::Error::InvalidArgument("at least one trajectory is required".into()));
    }
    let (set, mut states) = dps_training_set(fom, space, m_ivps, rng)?;
    states.extend(y_estimate)?;
    let basis = pod(&states, n)?;
    let cfg = TrainingConfig {
        seed: derive_seed(training.seed, Stage::Baseline, 0),
        ..training.clone()
    };
    let (rom, report) = train_eenn(&basis, &set, space, fom.time_grid().dt, &cfg)?;
    let pac = validator.evaluate(&rom, tau_design)?;
    Ok(ConventionalOutcome {
        rom,
        report: pac,
        training: report,
        basis,
        training_pairs: set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{HeatModel, HeatModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(steps: usize) -> HeatModel {
        HeatModel::new(HeatModelConfig {
            grid: 5,
            steps,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn pair_accounting() {
        let space = ParameterSpace::cube(4, 20.0, 1000.0).unwrap();
        let m = model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (set, states) = dps_training_set(&m, &space, 3, &mut rng).unwrap();
        assert_eq!(set.len(), 3 * 7);
        assert_eq!(states.ncols(), 3 * 8);
        // pairs are consecutive FOM states under the left-end parameters
        for k in 0..set.len() {
            let next = m.step(set.inputs.column(k), &set.mus[k], m.time_grid().dt).unwrap();
            for (a, b) in next.iter().zip(set.outputs.column(k)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_step_pairs_start_from_initial_state() {
        let space = ParameterSpace::cube(4, 20.0, 1000.0).unwrap();
        let m = model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (set, _) = dps_training_set(&m, &space, 4, &mut rng).unwrap();
        assert_eq!(set.len(), 4);
        assert!(set.inputs.columns().all(|c| c.iter().all(|&v| v == 20.0)));
    }
}
