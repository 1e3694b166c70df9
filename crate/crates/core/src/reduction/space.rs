use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ReducedBasis, ReducedState, SnapshotMatrix};
use crate::fom::{FullState, ParameterSpace, ParameterVector};
use crate::{par, Error, Result};

/// Per-coordinate bounds of the reduced state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Total expansion ratio applied relative to the estimated box.
    pub beta: f64,
}

impl ReducedBox {
    /// Min/max of every POD coordinate over the projected snapshots.
    pub fn estimate(snapshots: &SnapshotMatrix, basis: &ReducedBasis) -> Result<Self> {
        if snapshots.ncols() == 0 {
            return Err(Error::InvalidArgument("cannot estimate a box from zero snapshots".into()));
        }
        let coeffs = basis.project_all(snapshots)?;
        let n = basis.n();
        let mut lower = vec![f64::INFINITY; n];
        let mut upper = vec![f64::NEG_INFINITY; n];
        for j in 0..coeffs.ncols() {
            for i in 0..n {
                let v = coeffs[(i, j)];
                lower[i] = lower[i].min(v);
                upper[i] = upper[i].max(v);
            }
        }
        Ok(Self { lower, upper, beta: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Widens each side by `beta · (upper − lower)`.
    pub fn loosen(&self, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("expansion ratio must be >= 0 (got {beta})")));
        }
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                let w = hi - lo;
                (lo - beta * w, hi + beta * w)
            })
            .unzip();
        Ok(Self {
            lower,
            upper,
            beta: self.beta + beta * (1.0 + 2.0 * self.beta),
        })
    }

    pub fn contains(&self, y_r: &[f64]) -> bool {
        y_r.len() == self.dim()
            && y_r
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ReducedState {
        ReducedState(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        )
    }
}

/// Admissible range of full-field values used to trim the reduced box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimLimits {
    pub y_min: f64,
    pub y_max: f64,
}

impl TrimLimits {
    pub fn new(y_min: f64, y_max: f64) -> Result<Self> {
        if !(y_min < y_max) {
            return Err(Error::InvalidArgument(format!("trim limits need y_min < y_max ({y_min}, {y_max})")));
        }
        Ok(Self { y_min, y_max })
    }

    /// Accept everything.
    pub fn unbounded() -> Self {
        Self {
            y_min: f64::NEG_INFINITY,
            y_max: f64::INFINITY,
        }
    }

    /// Smallest and largest entry of the snapshots.
    pub fn from_snapshots(y: &SnapshotMatrix) -> Result<Self> {
        Self::new(y.min(), y.max())
    }

    /// `MAX(V y_r) < y_max` and `MIN(V y_r) > y_min`.
    pub fn accepts_field(&self, field: &[f64]) -> bool {
        field.iter().all(|&v| v > self.y_min && v < self.y_max)
    }
}

/// True iff the lifted state `V y_r` lies strictly inside the trim limits.
pub fn trim_accepts(basis: &ReducedBasis, y_r: &ReducedState, limits: &TrimLimits) -> Result<bool> {
    if limits.y_min == f64::NEG_INFINITY && limits.y_max == f64::INFINITY {
        return Ok(true);
    }
    Ok(limits.accepts_field(&basis.reconstruct(y_r)?))
}

/// One point of the joint space: a reduced state and a parameter vector.
///
/// `y_r` is expressed in the basis the sample was drawn with; `lifted` caches
/// `V·y_r` in that basis so the sample stays meaningful after the basis moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub y_r: ReducedState,
    pub mu: ParameterVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifted: Option<FullState>,
}

impl JointSample {
    /// The concatenated vector `[y_r, μ]`.
    pub fn joint_vector(&self) -> Vec<f64> {
        self.y_r.iter().chain(self.mu.iter()).copied().collect()
    }

    /// Full-space input state, from the cache or by lifting with `creation_basis`.
    pub fn lifted_input(&self, creation_basis: &ReducedBasis) -> Result<FullState> {
        match &self.lifted {
            Some(f) => Ok(f.clone()),
            None => creation_basis.reconstruct(&self.y_r),
        }
    }
}

/// Output of [`sample_joint`].
#[derive(Debug, Clone)]
pub struct JointSampling {
    pub samples: Vec<JointSample>,
    pub attempts: usize,
}

impl JointSampling {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            self.samples.len() as f64 / self.attempts as f64
        }
    }
}

const CANDIDATE_BATCH: usize = 1024;

/// Rejection-samples `count` points of `box × space` whose lifted reduced
/// state passes the trim test.
///
/// Candidates are drawn sequentially from `rng` in fixed-size batches and
/// screened in parallel, so the result depends only on the seed.
pub fn sample_joint<R: Rng + ?Sized>(
    reduced_box: &ReducedBox,
    space: &ParameterSpace,
    basis: &ReducedBasis,
    limits: &TrimLimits,
    count: usize,
    rng: &mut R,
    max_attempts: usize,
) -> Result<JointSampling> {
    if reduced_box.dim() != basis.n() {
        return Err(Error::dim("sample_joint box", basis.n(), reduced_box.dim()));
    }
    let mut samples = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while samples.len() < count {
        if attempts >= max_attempts {
            let rate = samples.len() as f64 / attempts.max(1) as f64;
            return Err(Error::SamplingExhausted {
                requested: count,
                accepted: samples.len(),
                attempts,
                rate,
            });
        }
        let batch = CANDIDATE_BATCH.min(max_attempts - attempts);
        let candidates: Vec<(ReducedState, ParameterVector)> = (0..batch)
            .map(|_| (reduced_box.sample(rng), space.sample(rng)))
            .collect();
        let verdicts = par::try_map_range(batch, |i| trim_accepts(basis, &candidates[i].0, limits))?;
        for ((y_r, mu), ok) in candidates.into_iter().zip(verdicts) {
            attempts += 1;
            if ok {
                samples.push(JointSample { y_r, mu, lifted: None });
                if samples.len() == count {
                    break;
                }
            }
        }
    }
    Ok(JointSampling { samples, attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::pod;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis() -> ReducedBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<f64> = (0..20 * 6).map(|_| rng.random_range(0.0..10.0)).collect();
        let y = SnapshotMatrix::from_column_major(20, data).unwrap();
        pod(&y, 3).unwrap()
    }

    #[test]
    fn single_snapshot_box_is_a_point() {
        let b = basis();
        let col: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = SnapshotMatrix::from_columns(20, [&col[..]]).unwrap();
        let bx = ReducedBox::estimate(&y, &b).unwrap();
        let p = b.project(&col).unwrap();
        for i in 0..3 {
            assert!((bx.lower[i] - p[i]).abs() < 1e-12);
            assert_eq!(bx.lower[i], bx.upper[i]);
        }
        assert!(ReducedBox::estimate(&SnapshotMatrix::new(20), &b).is_err());
    }

    #[test]
    fn symmetric_snapshots_give_symmetric_box() {
        let b = basis();
        let col: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let neg: Vec<f64> = col.iter().map(|v| -v).collect();
        let y = SnapshotMatrix::from_columns(20, [&col[..], &neg[..]]).unwrap();
        let bx = ReducedBox::estimate(&y, &b).unwrap();
        for (lo, hi) in bx.lower.iter().zip(&bx.upper) {
            assert!((lo + hi).abs() < 1e-12);
        }
    }

    #[test]
    fn loosen_formula() {
        let bx = ReducedBox { lower: vec![0.0, -2.0], upper: vec![1.0, 2.0], beta: 0.0 };
        assert_eq!(bx.loosen(0.0).unwrap(), bx);
        let l = bx.loosen(0.1).unwrap();
        assert!((l.lower[0] + 0.1).abs() < 1e-15 && (l.upper[0] - 1.1).abs() < 1e-15);
        for i in 0..2 {
            let mid0 = 0.5 * (bx.lower[i] + bx.upper[i]);
            let mid1 = 0.5 * (l.lower[i] + l.upper[i]);
            assert!((mid0 - mid1).abs() < 1e-15);
        }
        assert!(bx.loosen(-0.1).is_err());
    }

    #[test]
    fn loosen_composes() {
        let bx = ReducedBox { lower: vec![-3.0, 0.5], upper: vec![4.0, 0.75], beta: 0.0 };
        let (b1, b2) = (0.13, 0.27);
        let twice = bx.loosen(b1).unwrap().loosen(b2).unwrap();
        let once = bx.loosen(b1 + b2 * (1.0 + 2.0 * b1)).unwrap();
        for i in 0..2 {
            assert!((twice.lower[i] - once.lower[i]).abs() < 1e-12);
            assert!((twice.upper[i] - once.upper[i]).abs() < 1e-12);
        }
        assert!((twice.beta - once.beta).abs() < 1e-15);
    }

    #[test]
    fn trim_conditions() {
        let b = basis();
        let limits = TrimLimits::new(-1.0, 1.0).unwrap();
        assert!(trim_accepts(&b, &ReducedState(vec![0.0; 3]), &limits).unwrap());
        let y_r = ReducedState(vec![0.1, 0.05, -0.02]);
        let inside = b.reconstruct(&y_r).unwrap().iter().all(|v| v.abs() < 1.0);
        assert_eq!(trim_accepts(&b, &y_r, &limits).unwrap(), inside);
        assert!(!trim_accepts(&b, &ReducedState(vec![1e6, 0.0, 0.0]), &limits).unwrap());
    }

    #[test]
    fn unbounded_limits_accept_everything() {
        let b = basis();
        let bx = ReducedBox { lower: vec![-1.0; 3], upper: vec![1.0; 3], beta: 0.0 };
        let space = ParameterSpace::cube(2, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_joint(&bx, &space, &b, &TrimLimits::unbounded(), 100, &mut rng, 100_000).unwrap();
        assert_eq!(s.acceptance_rate(), 1.0);
        assert!(s.samples.iter().all(|j| bx.contains(&j.y_r) && space.contains(&j.mu)));
    }

    #[test]
    fn trimmed_samples_satisfy_limits_and_are_reproducible() {
        let b = basis();
        let bx = ReducedBox { lower: vec![-5.0; 3], upper: vec![5.0; 3], beta: 0.0 };
        let space = ParameterSpace::cube(2, 0.0, 1.0).unwrap();
        let limits = TrimLimits::new(-2.0, 2.0).unwrap();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            sample_joint(&bx, &space, &b, &limits, 50, &mut rng, 1_000_000).unwrap()
        };
        let s = draw();
        assert!(s.acceptance_rate() < 1.0 && s.acceptance_rate() > 0.0);
        for j in &s.samples {
            assert!(trim_accepts(&b, &j.y_r, &limits).unwrap());
        }
        assert_eq!(s.samples, draw().samples);
    }

    #[test]
    fn exhausted_budget_reports_rate() {
        let b = basis();
        let bx = ReducedBox { lower: vec![100.0; 3], upper: vec![200.0; 3], beta: 0.0 };
        let space = ParameterSpace::cube(1, 0.0, 1.0).unwrap();
        let limits = TrimLimits::new(-1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = sample_joint(&bx, &space, &b, &limits, 5, &mut rng, 3000).unwrap_err();
        assert!(matches!(err, Error::SamplingExhausted { attempts: 3000, accepted: 0, .. }));
    }
}
