use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-feature affine map `x ↦ (x − shift) / scale` onto the unit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNormalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNormalizer {
    /// Maps `[lower, upper]` onto `[0, 1]`. Degenerate features get unit scale.
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("normalizer bounds", lower.len(), upper.len()));
        }
        let scale = lower
            .iter()
            .zip(upper)
            .map(|(lo, hi)| {
                let w = hi - lo;
                if w > 0.0 && w.is_finite() {
                    w
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            shift: lower.to_vec(),
            scale,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("normalizer input", self.dim(), x.len()));
        }
        Ok(x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| (v - s) / c)
            .collect())
    }

    /// Normalizes the concatenation `[a, b]` without allocating the joint vector.
    pub fn apply_joint(&self, a: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
        if a.len() + b.len() != self.dim() || out.len() != self.dim() {
            return Err(Error::dim("normalizer input", self.dim(), a.len() + b.len()));
        }
        for (i, v) in a.iter().chain(b).enumerate() {
            out[i] = (v - self.shift[i]) / self.scale[i];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_bounds_to_unit_box() {
        let n = InputNormalizer::from_bounds(&[-1.0, 20.0, 5.0], &[1.0, 1000.0, 5.0]).unwrap();
        assert_eq!(n.apply(&[-1.0, 20.0, 5.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(n.apply(&[1.0, 1000.0, 6.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        let mut out = [0.0; 3];
        n.apply_joint(&[0.0], &[510.0, 5.0], &mut out).unwrap();
        assert_eq!(out, [0.5, 0.5, 0.0]);
    }
}
