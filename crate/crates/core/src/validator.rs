//! PAC validation of one-step ROM predictions.
//!
//! A validator is a frozen set of `s` one-step tests: joint inputs (stored as
//! lifted full states, so they survive basis refreshes) together with the FOM
//! output after one time step. Evaluating a ROM on it yields the observed
//! confidence at a design error level and the best certified error level.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fom::{FullOrderModel, ParameterSpace, ParameterVector};
use crate::reduction::{sample_joint, JointSample, ReducedBasis, ReducedBox, SnapshotMatrix, TrimLimits};
use crate::rom::{one_step_error, ReducedModel};
use crate::{par, Error, Result};

/// Number of tests needed so that the observed confidence is within `epsilon`
/// of the true one with probability at least `1 − sigma`:
/// `⌈ln(2/σ) / (2ε²)⌉`, never less than one.
pub fn required_samples(epsilon: f64, sigma: f64) -> Result<usize> {
    let open_unit = |v: f64| v > 0.0 && v < 1.0;
    if !open_unit(epsilon) || !open_unit(sigma) {
        return Err(Error::InvalidArgument(format!(
            "epsilon and sigma must lie in (0, 1) (got {epsilon}, {sigma})"
        )));
    }
    let s = ((2.0 / sigma).ln() / (2.0 * epsilon * epsilon)).ceil();
    Ok((s as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacDesign {
    pub epsilon: f64,
    pub sigma: f64,
    pub s: usize,
}

impl PacDesign {
    /// The smallest admissible design for `(epsilon, sigma)`.
    pub fn new(epsilon: f64, sigma: f64) -> Result<Self> {
        Ok(Self {
            epsilon,
            sigma,
            s: required_samples(epsilon, sigma)?,
        })
    }

    pub fn with_samples(epsilon: f64, sigma: f64, s: usize) -> Result<Self> {
        let need = required_samples(epsilon, sigma)?;
        if s < need {
            return Err(Error::InvalidArgument(format!(
                "{s} tests are fewer than the {need} required for epsilon = {epsilon}, sigma = {sigma}"
            )));
        }
        Ok(Self { epsilon, sigma, s })
    }

    /// Certified confidence `η = 1 − ε`.
    pub fn eta(&self) -> f64 {
        1.0 - self.epsilon
    }
}

/// Frozen one-step tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PacValidator {
    pub design: PacDesign,
    /// Test inputs in the coordinates of the basis they were drawn with.
    pub samples: Vec<JointSample>,
    /// Lifted test inputs, one column per test.
    pub inputs: SnapshotMatrix,
    /// FOM outputs after one step, one column per test.
    pub references: SnapshotMatrix,
    pub dt: f64,
}

/// Result of evaluating a ROM on a validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacReport {
    /// One-step relative errors in test order; a diverged prediction counts as `+∞`.
    pub errors: Vec<f64>,
    pub tau_design: f64,
    /// Observed confidence `p(τ*_design)`.
    pub p_at_design: f64,
    /// Number of tests with error `≤ τ*_design`.
    pub count_at_design: usize,
    /// Best certified error level `τ̄* = max(errors)`.
    pub tau_bar: f64,
    /// Certified confidence `1 − ε`.
    pub eta: f64,
}

impl PacReport {
    pub fn certified_accuracy(&self) -> f64 {
        1.0 - self.tau_bar
    }
}

/// Fraction of `errors` at or below `tau`.
pub fn observed_confidence(errors: &[f64], tau: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no validation errors".into()));
    }
    Ok(count_within(errors, tau) as f64 / errors.len() as f64)
}

fn count_within(errors: &[f64], tau: f64) -> usize {
    errors.iter().filter(|&&e| e <= tau).count()
}

/// The smallest `τ*` with `p(τ*) = 1`, i.e. the largest error.
pub fn best_tau(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no validation errors".into()));
    }
    Ok(errors.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// The empirical `τ* ↦ p(τ*)` curve at every distinct error value.
pub fn confidence_curve(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let s = sorted.len() as f64;
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / s;
        match curve.last_mut() {
            Some(last) if last.0 == e => last.1 = p,
            _ => curve.push((e, p)),
        }
    }
    curve
}

impl PacValidator {
    /// Draws `design.s` joint samples and runs one FOM step from each.
    #[allow(clippy::too_many_arguments)]
    pub fn build<F, R>(
        fom: &F,
        space: &ParameterSpace,
        reduced_box: &ReducedBox,
        limits: &TrimLimits,
        basis: &ReducedBasis,
        design: PacDesign,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<(Self, f64)>
    where
        F: FullOrderModel + ?Sized,
        R: Rng + ?Sized,
    {
        let draw = sample_joint(reduced_box, space, basis, limits, design.s, rng, max_attempts)?;
        let rate = draw.acceptance_rate();
        let validator = Self::from_samples(fom, basis, design, draw.samples)?;
        Ok((validator, rate))
    }

    /// Runs the FOM from given joint samples expressed in `basis`.
    pub fn from_samples<F>(
        fom: &F,
        basis: &ReducedBasis,
        design: PacDesign,
        samples: Vec<JointSample>,
    ) -> Result<Self>
    where
        F: FullOrderModel + ?Sized,
    {
        if samples.len() != design.s {
            return Err(Error::dim("validator samples", design.s, samples.len()));
        }
        let dt = fom.time_grid().dt;
        let pairs = par::try_map_range(samples.len(), |i| {
            let lifted = samples[i].lifted_input(basis)?;
            let out = fom.step(&lifted, &samples[i].mu, dt)?;
            Ok((lifted, out))
        })?;
        let rows = fom.state_dim();
        let mut inputs = SnapshotMatrix::with_capacity(rows, samples.len());
        let mut references = SnapshotMatrix::with_capacity(rows, samples.len());
        for (i, (lifted, out)) in pairs.iter().enumerate() {
            if !out.is_finite() || out.norm() == 0.0 {
                return Err(Error::ZeroNormReference { index: i });
            }
            inputs.push(lifted)?;
            references.push(out)?;
        }
        let samples = samples
            .into_iter()
            .map(|s| JointSample { lifted: None, ..s })
            .collect();
        Ok(Self {
            design,
            samples,
            inputs,
            references,
            dt,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mu(&self, i: usize) -> &ParameterVector {
        &self.samples[i].mu
    }

    /// One-step errors of `rom` on every test, re-projecting the stored inputs
    /// onto the ROM's basis.
    pub fn errors<M: ReducedModel + ?Sized>(&self, rom: &M) -> Result<Vec<f64>> {
        let basis = rom.basis();
        if basis.rows() != self.inputs.nrows() {
            return Err(Error::dim("ROM basis rows", self.inputs.nrows(), basis.rows()));
        }
        par::try_map_range(self.len(), |i| {
            let y_r = basis.project(self.inputs.column(i))?;
            let reference = crate::fom::FullState(self.references.column(i).to_vec());
            match one_step_error(rom, &y_r, &self.samples[i].mu, &reference) {
                Ok(e) if e.is_finite() => Ok(e),
                Ok(_) | Err(Error::NonFinite(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
    }

    /// Evaluates `rom` at the design error level `tau_design`.
    pub fn evaluate<M: ReducedModel + ?Sized>(&self, rom: &M, tau_design: f64) -> Result<PacReport> {
        if !(tau_design > 0.0 && tau_design < 1.0) {
            return Err(Error::InvalidArgument(format!("tau_design must lie in (0, 1) (got {tau_design})")));
        }
        let errors = self.errors(rom)?;
        Ok(self.report(errors, tau_design)?)
    }

    /// Summarizes precomputed errors.
    pub fn report(&self, errors: Vec<f64>, tau_design: f64) -> Result<PacReport> {
        let count_at_design = count_within(&errors, tau_design);
        Ok(PacReport {
            p_at_design: observed_confidence(&errors, tau_design)?,
            count_at_design,
            tau_bar: best_tau(&errors)?,
            tau_design,
            eta: self.design.eta(),
            errors,
        })
    }
}
