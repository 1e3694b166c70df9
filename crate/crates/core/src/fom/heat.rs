use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};

use super::{BandedCholesky, FullOrderModel, FullState, TimeGrid};
use crate::{Error, Result};

/// Settings of the 2-D heat-conduction model on a square plate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatModelConfig {
    /// Cells per side; the state holds `grid²` cell-centred temperatures.
    pub grid: usize,
    pub k_x: f64,
    pub k_y: f64,
    pub side_length: f64,
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
    pub initial_temperature: f64,
}

impl Default for HeatModelConfig {
    fn default() -> Self {
        Self {
            grid: 50,
            k_x: 1.0,
            k_y: 1.0,
            side_length: 10.0,
            t0: 0.0,
            t_end: 2.0,
            steps: 100,
            initial_temperature: 20.0,
        }
    }
}

impl HeatModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 3 {
            return Err(Error::Config(format!("fom.grid must be >= 3 (got {})", self.grid)));
        }
        if self.steps < 1 {
            return Err(Error::Config("fom.steps must be >= 1".into()));
        }
        if !(self.t_end > self.t0) {
            return Err(Error::Config("fom.t_end must exceed fom.t0".into()));
        }
        for (name, v) in [("k_x", self.k_x), ("k_y", self.k_y), ("side_length", self.side_length)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("fom.{name} must be positive (got {v})")));
            }
        }
        if !self.initial_temperature.is_finite() {
            return Err(Error::Config("fom.initial_temperature must be finite".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn spacing(&self) -> f64 {
        self.side_length / self.grid as f64
    }
}

/// Backward-Euler finite-difference solver for
/// `∂T/∂t = k_x ∂²T/∂x² + k_y ∂²T/∂y²` with four Dirichlet walls.
///
/// Parameters are the wall temperatures `(left, right, down, up)`. The outer
/// ring of cells is pinned to the wall values (corners take the mean of their
/// two walls); the `(grid-2)²` interior cells are unknowns of a 5-point
/// implicit system whose banded Cholesky factor is computed once per `dt`.
#[derive(Debug)]
pub struct HeatModel {
    config: HeatModelConfig,
    default_factor: Arc<BandedCholesky>,
    other_factors: Mutex<Vec<(u64, Arc<BandedCholesky>)>>,
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const UP: usize = 3;

impl HeatModel {
    pub fn new(config: HeatModelConfig) -> Result<Self> {
        config.validate()?;
        let default_factor = Arc::new(Self::assemble(&config, config.dt())?);
        Ok(Self {
            config,
            default_factor,
            other_factors: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &HeatModelConfig {
        &self.config
    }

    pub fn grid(&self) -> usize {
        self.config.grid
    }

    /// Flat index of cell `(ix, iy)`; `ix` runs left→right, `iy` down→up.
    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.config.grid + ix
    }

    fn assemble(config: &HeatModelConfig, dt: f64) -> Result<BandedCholesky> {
        let m = config.grid - 2;
        let h2 = config.spacing().powi(2);
        let cx = dt * config.k_x / h2;
        let cy = dt * config.k_y / h2;
        let diag = 1.0 + 2.0 * cx + 2.0 * cy;
        // unknown u = (iy-1)·m + (ix-1); x-neighbours are 1 apart, y-neighbours m apart
        BandedCholesky::factor(m * m, m, |i, j| {
            if i == j {
                diag
            } else if i - j == 1 && i % m != 0 {
                -cx
            } else if i - j == m {
                -cy
            } else {
                0.0
            }
        })
    }

    fn factor_for(&self, dt: f64) -> Result<Arc<BandedCholesky>> {
        if dt == self.config.dt() {
            return Ok(self.default_factor.clone());
        }
        let key = dt.to_bits();
        let mut cache = self.other_factors.lock().expect("factor cache poisoned");
        if let Some((_, f)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(f.clone());
        }
        let f = Arc::new(Self::assemble(&self.config, dt)?);
        cache.push((key, f.clone()));
        Ok(f)
    }

    /// Value the ring cell `(ix, iy)` is pinned to.
    fn ring_value(&self, ix: usize, iy: usize, bc: &[f64]) -> f64 {
        let last = self.config.grid - 1;
        let horizontal = if ix == 0 {
            Some(bc[LEFT])
        } else if ix == last {
            Some(bc[RIGHT])
        } else {
            None
        };
        let vertical = if iy == 0 {
            Some(bc[DOWN])
        } else if iy == last {
            Some(bc[UP])
        } else {
            None
        };
        match (horizontal, vertical) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("interior cell passed as ring cell"),
        }
    }
}

impl FullOrderModel for HeatModel {
    fn state_dim(&self) -> usize {
        self.config.grid * self.config.grid
    }

    fn param_dim(&self) -> usize {
        4
    }

    fn time_grid(&self) -> TimeGrid {
        TimeGrid {
            t0: self.config.t0,
            dt: self.config.dt(),
            steps: self.config.steps,
        }
    }

    fn initial_state(&self) -> FullState {
        FullState::uniform(self.state_dim(), self.config.initial_temperature)
    }

    fn step(&self, state: &[f64], bc: &[f64], dt: f64) -> Result<FullState> {
        let g = self.config.grid;
        if state.len() != g * g {
            return Err(Error::dim("heat step state", g * g, state.len()));
        }
        if bc.len() != 4 {
            return Err(Error::dim("heat step boundary values", 4, bc.len()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive (got {dt})")));
        }
        if !state.iter().chain(bc).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("heat step input".into()));
        }
        let factor = self.factor_for(dt)?;
        let m = g - 2;
        let h2 = self.config.spacing().powi(2);
        let cx = dt * self.config.k_x / h2;
        let cy = dt * self.config.k_y / h2;

        let mut rhs = Vec::with_capacity(m * m);
        for iy in 1..=m {
            for ix in 1..=m {
                let mut v = state[iy * g + ix];
                if ix == 1 {
                    v += cx * bc[LEFT];
                }
                if ix == m {
                    v += cx * bc[RIGHT];
                }
                if iy == 1 {
                    v += cy * bc[DOWN];
                }
                if iy == m {
                    v += cy * bc[UP];
                }
                rhs.push(v);
            }
        }
        factor.solve_in_place(&mut rhs);

        let mut out = vec![0.0; g * g];
        for iy in 0..g {
            for ix in 0..g {
                let idx = iy * g + ix;
                out[idx] = if ix == 0 || iy == 0 || ix == g - 1 || iy == g - 1 {
                    self.ring_value(ix, iy, bc)
                } else {
                    rhs[(iy - 1) * m + (ix - 1)]
                };
            }
        }
        Ok(FullState(out))
    }
}
