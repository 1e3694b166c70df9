//! Run configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active::ActiveConfig;
use crate::fom::{HeatModelConfig, ParameterSpace};
use crate::reduction::{SnapshotMatrix, TrimLimits};
use crate::rom::TrainingConfig;
use crate::validator::PacDesign;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// How the full-field trim limits are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum TrimMode {
    /// Smallest and largest entry of the estimate snapshots.
    #[default]
    Snapshots,
    Fixed { y_min: f64, y_max: f64 },
    Unbounded,
}

impl TrimMode {
    pub fn limits(&self, y_estimate: &SnapshotMatrix) -> Result<TrimLimits> {
        match *self {
            TrimMode::Snapshots => TrimLimits::from_snapshots(y_estimate),
            TrimMode::Fixed { y_min, y_max } => TrimLimits::new(y_min, y_max),
            TrimMode::Unbounded => Ok(TrimLimits::unbounded()),
        }
    }
}

fn default_beta() -> f64 {
    0.1
}

fn default_estimate_ivps() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacesConfig {
    /// Parameter-box minima.
    pub lower: Vec<f64>,
    /// Parameter-box maxima.
    pub upper: Vec<f64>,
    /// Reduced dimension.
    pub n: usize,
    /// Expansion ratio applied to the estimated reduced box.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub trim: TrimMode,
    /// Constant-parameter IVPs used to estimate the reduced space.
    #[serde(default = "default_estimate_ivps")]
    pub estimate_ivps: usize,
}

fn default_tau_design() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacConfig {
    pub epsilon: f64,
    pub sigma: f64,
    #[serde(default = "default_tau_design")]
    pub tau_design: f64,
    /// Test count; the bound-derived minimum when omitted.
    #[serde(default)]
    pub samples: Option<usize>,
}

impl PacConfig {
    pub fn design(&self) -> Result<PacDesign> {
        let d = match self.samples {
            Some(s) => PacDesign::with_samples(self.epsilon, self.sigma, s),
            None => PacDesign::new(self.epsilon, self.sigma),
        };
        d.map_err(|e| Error::Config(format!("pac: {e}")))
    }
}

/// Loop settings; the design level lives in [`PacConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveSection {
    pub pool_size: usize,
    pub delta_s: usize,
    pub delta_tau_tol: f64,
    pub max_iterations: usize,
}

impl Default for ActiveSection {
    fn default() -> Self {
        let a = ActiveConfig::default();
        Self {
            pool_size: a.pool_size,
            delta_s: a.delta_s,
            delta_tau_tol: a.delta_tau_tol,
            max_iterations: a.max_iterations,
        }
    }
}

fn default_baseline_ivps() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "default_baseline_ivps")]
    pub ivps: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            ivps: default_baseline_ivps(),
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_output_dir() -> String {
    "runs/default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub fom: HeatModelConfig,
    pub spaces: SpacesConfig,
    pub pac: PacConfig,
    #[serde(default)]
    pub active: ActiveSection,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

impl RunConfig {
    /// The 2-D heat experiment: four wall temperatures in `[20, 1000]`,
    /// `n = 20`, `ε = 3 %`, `σ = 1 %`, `τ̄*_design = 1 %`, `Δs = 500`, pool of 40 000.
    pub fn heat_experiment(seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            output_dir: default_output_dir(),
            fom: HeatModelConfig::default(),
            spaces: SpacesConfig {
                lower: vec![20.0; 4],
                upper: vec![1000.0; 4],
                n: 20,
                beta: default_beta(),
                trim: TrimMode::Snapshots,
                estimate_ivps: 20,
            },
            pac: PacConfig {
                epsilon: 0.03,
                sigma: 0.01,
                tau_design: 0.01,
                samples: None,
            },
            active: ActiveSection::default(),
            training: TrainingConfig {
                seed,
                ..TrainingConfig::default()
            },
            baseline: BaselineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: expected {CONFIG_VERSION}, found {}",
                self.version
            )));
        }
        self.fom.validate()?;
        let space = self.space()?;
        if space.dim() != 4 {
            return Err(Error::Config(format!(
                "spaces.lower: the heat model takes 4 wall temperatures, got {}",
                space.dim()
            )));
        }
        let n = self.spaces.n;
        if n == 0 || n > self.fom.grid * self.fom.grid {
            return Err(Error::Config(format!("spaces.n: must lie in 1..=state dimension (got {n})")));
        }
        if !(self.spaces.beta >= 0.0 && self.spaces.beta.is_finite()) {
            return Err(Error::Config("spaces.beta: must be >= 0".into()));
        }
        if self.spaces.estimate_ivps == 0 {
            return Err(Error::Config("spaces.estimate_ivps: must be positive".into()));
        }
        if let TrimMode::Fixed { y_min, y_max } = self.spaces.trim {
            if !(y_min < y_max) {
                return Err(Error::Config("spaces.trim: y_min must be below y_max".into()));
            }
        }
        self.pac.design()?;
        self.active_config().validate()?;
        self.training.validate()?;
        if self.baseline.ivps == 0 {
            return Err(Error::Config("baseline.ivps: must be positive".into()));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<ParameterSpace> {
        ParameterSpace::new(self.spaces.lower.clone(), self.spaces.upper.clone())
            .map_err(|e| Error::Config(format!("spaces: {e}")))
    }

    pub fn active_config(&self) -> ActiveConfig {
        ActiveConfig {
            pool_size: self.active.pool_size,
            delta_s: self.active.delta_s,
            tau_design: self.pac.tau_design,
            delta_tau_tol: self.active.delta_tau_tol,
            max_iterations: self.active.max_iterations,
        }
    }

    /// SHA-256 over everything except the output directory, hex encoded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir.clear();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
