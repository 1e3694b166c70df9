//! Full-order model interface, parameter spaces and schedules.

mod banded;
mod heat;

pub use banded::BandedCholesky;
pub use heat::{HeatModel, HeatModelConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::ops::Deref;

use crate::reduction::{ReducedBasis, ReducedState, SnapshotMatrix};
use crate::{Error, Result};

/// A full-order state vector (nodal temperatures for the heat model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullState(pub Vec<f64>);

impl FullState {
    pub fn uniform(len: usize, value: f64) -> Self {
        FullState(vec![value; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Deref for FullState {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A parameter vector μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(pub Vec<f64>);

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Axis-aligned box of admissible parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterSpace {
    /// Builds a box; `lower[i] <= upper[i]` is required (degenerate sides are allowed).
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument("parameter space needs at least one dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::dim("ParameterSpace bounds", lower.len(), upper.len()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "parameter {i}: invalid range [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same range `[lo, hi]` in each of `dim` coordinates.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn midpoint(&self) -> ParameterVector {
        ParameterVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        )
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// One point drawn uniformly from the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        ParameterVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        )
    }
}

/// Static parameter sampling: `m` i.i.d. uniform draws from the box.
pub fn sps_sample<R: Rng + ?Sized>(space: &ParameterSpace, m: usize, rng: &mut R) -> Vec<ParameterVector> {
    (0..m).map(|_| space.sample(rng)).collect()
}

/// Dynamic parameter sampling: one independent draw per time knot, linearly
/// interpolated in between.
pub fn dps_schedule<R: Rng + ?Sized>(
    space: &ParameterSpace,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<ParameterSchedule> {
    let knots = (0..=grid.steps)
        .map(|i| (grid.time(i), space.sample(rng)))
        .collect();
    ParameterSchedule::new(knots)
}

/// Uniform time grid `t_i = t0 + i·dt`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps)
    }
}

/// Piecewise-linear parameter trajectory μ(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSchedule {
    times: Vec<f64>,
    values: Vec<ParameterVector>,
}

impl ParameterSchedule {
    pub fn new(knots: Vec<(f64, ParameterVector)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one knot".into()));
        }
        let dim = knots[0].1.len();
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidArgument(format!(
                    "schedule knot times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((_, mu)) = knots.iter().find(|(_, mu)| mu.len() != dim) {
            return Err(Error::dim("ParameterSchedule knot", dim, mu.len()));
        }
        let (times, values) = knots.into_iter().unzip();
        Ok(Self { times, values })
    }

    /// A schedule holding `mu` over `[t0, t1]`.
    pub fn constant(t0: f64, t1: f64, mu: ParameterVector) -> Result<Self> {
        Self::new(vec![(t0, mu.clone()), (t1, mu)])
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, &ParameterVector)> {
        self.times.iter().copied().zip(self.values.iter())
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// μ(t). Times outside the knot range are clamped to the end knots.
    pub fn eval(&self, t: f64) -> ParameterVector {
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[last] {
            return self.values[last].clone();
        }
        // first knot strictly greater than t
        let hi = self.times.partition_point(|&k| k <= t);
        let lo = hi - 1;
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let w = (t - t0) / (t1 - t0);
        if w == 0.0 {
            return self.values[lo].clone();
        }
        ParameterVector(
            self.values[lo]
                .iter()
                .zip(self.values[hi].iter())
                .map(|(a, b)| a + w * (b - a))
                .collect(),
        )
    }

    /// True when every knot lies in `space` (then every evaluation does too).
    pub fn within(&self, space: &ParameterSpace) -> bool {
        self.values.iter().all(|v| space.contains(v))
    }
}

/// A time-dependent simulator `y' = f(y, μ)` advanced in discrete steps.
pub trait FullOrderModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    fn time_grid(&self) -> TimeGrid;

    fn initial_state(&self) -> FullState;

    /// Advance `state` by `dt` under parameters `mu`.
    fn step(&self, state: &[f64], mu: &[f64], dt: f64) -> Result<FullState>;

    /// Solve the IVP on the model's time grid. Step `i -> i+1` uses `μ(t_i)`.
    fn solve_ivp(&self, schedule: &ParameterSchedule) -> Result<SnapshotMatrix> {
        let grid = self.time_grid();
        if schedule.dim() != self.param_dim() {
            return Err(Error::dim("solve_ivp schedule", self.param_dim(), schedule.dim()));
        }
        let mut state = self.initial_state();
        let mut snapshots = SnapshotMatrix::with_capacity(self.state_dim(), grid.steps + 1);
        snapshots.push(&state)?;
        for i in 0..grid.steps {
            let mu = schedule.eval(grid.time(i));
            state = self.step(&state, &mu, grid.dt)?;
            snapshots.push(&state)?;
        }
        Ok(snapshots)
    }

    /// One step started from the lifted reduced state `V·y_r`.
    fn lift_and_step(
        &self,
        basis: &ReducedBasis,
        y_r: &ReducedState,
        mu: &[f64],
        dt: f64,
    ) -> Result<FullState> {
        let lifted = basis.reconstruct(y_r)?;
        if dt == 0.0 {
            return Ok(lifted);
        }
        self.step(&lifted, mu, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sps_degenerate_box_repeats_point() {
        let space = ParameterSpace::new(vec![3.0, 7.0], vec![3.0, 7.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = sps_sample(&space, 5, &mut rng);
        assert!(samples.iter().all(|s| s.0 == vec![3.0, 7.0]));
    }

    #[test]
    fn sps_mean_converges() {
        let space = ParameterSpace::cube(2, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = sps_sample(&space, 1000, &mut rng);
        for d in 0..2 {
            let mean = samples.iter().map(|s| s[d]).sum::<f64>() / 1000.0;
            assert!((mean - 0.5).abs() < 0.05, "coordinate {d} mean {mean}");
        }
        assert!(sps_sample(&space, 0, &mut rng).is_empty());
    }

    #[test]
    fn schedule_interpolates_linearly() {
        let space = ParameterSpace::cube(4, 20.0, 1000.0).unwrap();
        let grid = TimeGrid { t0: 0.0, dt: 0.02, steps: 100 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sched = dps_schedule(&space, &grid, &mut rng).unwrap();
        let knots: Vec<_> = sched.knots().map(|(t, v)| (t, v.clone())).collect();
        assert_eq!(knots.len(), 101);
        for (t, v) in &knots {
            assert_eq!(&sched.eval(*t), v);
        }
        for w in knots.windows(2) {
            let mid = sched.eval(0.5 * (w[0].0 + w[1].0));
            for d in 0..4 {
                let expected = 0.5 * (w[0].1[d] + w[1].1[d]);
                assert!((mid[d] - expected).abs() < 1e-9);
            }
        }
        // bound sweep
        for k in 0..=2000 {
            let t = 2.0 * k as f64 / 2000.0;
            assert!(space.contains(&sched.eval(t)), "t = {t}");
        }
    }

    #[test]
    fn schedule_rejects_unordered_knots() {
        let mu = ParameterVector(vec![1.0]);
        let err = ParameterSchedule::new(vec![(1.0, mu.clone()), (1.0, mu)]);
        assert!(err.is_err());
    }
}
