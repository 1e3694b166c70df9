use crate::{Error, Result};

/// Cholesky factor of a symmetric positive-definite banded matrix.
///
/// Only the lower band is stored: row `i` holds `L[i][i-bw..=i]`
/// contiguously (entries left of column 0 are zero padding).
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factorizes the matrix whose lower-band entry `(i, j)`, `i - bw <= j <= i`,
    /// is returned by `entry(i, j)`.
    pub fn factor<F>(n: usize, bw: usize, entry: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64,
    {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= band[i * w + bw + k - i] * band[j * w + bw + k - j];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Factorization(format!(
                            "banded matrix not positive definite at row {i} (pivot {s})"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + bw + j - i] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.bw + 1) + self.bw + j - i]
    }

    /// Overwrites `rhs` with `A⁻¹ rhs`.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        let bw = self.bw;
        // L z = b
        for i in 0..self.n {
            let j0 = i.saturating_sub(bw);
            let mut s = rhs[i];
            for j in j0..i {
                s -= self.l(i, j) * rhs[j];
            }
            rhs[i] = s / self.l(i, i);
        }
        // Lᵀ x = z
        for i in (0..self.n).rev() {
            let mut s = rhs[i];
            for k in (i + 1)..(i + bw + 1).min(self.n) {
                s -= self.l(k, i) * rhs[k];
            }
            rhs[i] = s / self.l(i, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        // A = tridiag(-1, 4, -1), x = [1, 2, ..., 6]
        let n = 6;
        let a = |i: usize, j: usize| if i == j { 4.0 } else { -1.0 };
        let chol = BandedCholesky::factor(n, 1, a).unwrap();
        let x: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = 4.0 * x[i];
                if i > 0 {
                    s -= x[i - 1];
                }
                if i + 1 < n {
                    s -= x[i + 1];
                }
                s
            })
            .collect();
        chol.solve_in_place(&mut b);
        for (got, want) in b.iter().zip(&x) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = |i: usize, j: usize| if i == j { 1.0 } else { 2.0 };
        assert!(BandedCholesky::factor(3, 1, a).is_err());
    }
}
