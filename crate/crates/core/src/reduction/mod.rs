//! Proper orthogonal decomposition and the reduced joint sampling space.

mod space;

pub use space::{sample_joint, trim_accepts, JointSample, JointSampling, ReducedBox, TrimLimits};

use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};
use std::ops::Deref;

use crate::fom::FullState;
use crate::{Error, Result};

/// Column-stacked full states, stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMatrix {
    rows: usize,
    data: Vec<f64>,
}

impl SnapshotMatrix {
    pub fn new(rows: usize) -> Self {
        Self { rows, data: Vec::new() }
    }

    pub fn with_capacity(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            data: Vec::with_capacity(rows * cols),
        }
    }

    /// Wraps a column-major buffer of `rows × (data.len() / rows)` values.
    pub fn from_column_major(rows: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || data.len() % rows != 0 {
            return Err(Error::InvalidArgument(format!(
                "buffer of {} values is not a whole number of {rows}-row columns",
                data.len()
            )));
        }
        Ok(Self { rows, data })
    }

    pub fn from_columns<'a, I>(rows: usize, columns: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut m = Self::new(rows);
        for c in columns {
            m.push(c)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, column: &[f64]) -> Result<()> {
        if column.len() != self.rows {
            return Err(Error::dim("snapshot column", self.rows, column.len()));
        }
        self.data.extend_from_slice(column);
        Ok(())
    }

    /// Appends all columns of `other`.
    pub fn extend(&mut self, other: &SnapshotMatrix) -> Result<()> {
        if other.rows != self.rows {
            return Err(Error::dim("snapshot concatenation", self.rows, other.rows));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        if self.rows == 0 {
            0
        } else {
            self.data.len() / self.rows
        }
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.rows.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.rows, self.ncols())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Coordinates in a reduced basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedState(pub Vec<f64>);

impl Deref for ReducedState {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Orthonormal basis `V` (N × n, column-major) with the POD spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBasis {
    rows: usize,
    n: usize,
    data: Vec<f64>,
    singular_values: Vec<f64>,
}

impl ReducedBasis {
    /// Wraps given columns without re-orthonormalizing; used for persisted bases.
    pub fn from_parts(rows: usize, n: usize, data: Vec<f64>, singular_values: Vec<f64>) -> Result<Self> {
        if data.len() != rows * n {
            return Err(Error::dim("basis buffer", rows * n, data.len()));
        }
        Ok(Self {
            rows,
            n,
            data,
            singular_values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.rows, self.n)
    }

    /// `Vᵀ y`.
    pub fn project(&self, y: &[f64]) -> Result<ReducedState> {
        if y.len() != self.rows {
            return Err(Error::dim("project", self.rows, y.len()));
        }
        Ok(ReducedState(
            (0..self.n).map(|j| dot(self.column(j), y)).collect(),
        ))
    }

    /// `V y_r`.
    pub fn reconstruct(&self, y_r: &[f64]) -> Result<FullState> {
        if y_r.len() != self.n {
            return Err(Error::dim("reconstruct", self.n, y_r.len()));
        }
        let mut out = vec![0.0; self.rows];
        for (j, &c) in y_r.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.column(j)) {
                *o += c * v;
            }
        }
        Ok(FullState(out))
    }

    /// `Vᵀ Y` for every column at once (n × N_s).
    pub fn project_all(&self, y: &SnapshotMatrix) -> Result<Mat<f64>> {
        if y.nrows() != self.rows {
            return Err(Error::dim("project_all", self.rows, y.nrows()));
        }
        Ok(self.as_mat().transpose() * y.as_mat())
    }

    /// `‖Y − V Vᵀ Y‖_F`.
    pub fn projection_error(&self, y: &SnapshotMatrix) -> Result<f64> {
        let coeffs = self.project_all(y)?;
        let residual = y.as_mat() - self.as_mat() * &coeffs;
        Ok(residual.norm_l2())
    }

    /// `max |VᵀV − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.as_mat().transpose() * self.as_mat();
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Fraction of snapshot energy captured by the first `n` modes.
    pub fn captured_energy(&self) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return 1.0;
        }
        self.singular_values.iter().take(self.n).map(|s| s * s).sum::<f64>() / total
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// POD basis of dimension `n` from the (uncentred) snapshots `Y`.
///
/// The eigenproblem is solved on the smaller Gram side: `YᵀY` when
/// `N_s ≤ N`, otherwise `YYᵀ`. Each column's largest-magnitude entry is
/// made positive so the basis is reproducible.
pub fn pod(y: &SnapshotMatrix, n: usize) -> Result<ReducedBasis> {
    let (rows, cols) = (y.nrows(), y.ncols());
    let rank_cap = rows.min(cols);
    if n == 0 || n > rank_cap {
        return Err(Error::InvalidArgument(format!(
            "POD dimension {n} outside 1..={rank_cap} for a {rows}×{cols} snapshot matrix"
        )));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("snapshot matrix".into()));
    }
    let ym = y.as_mat();

    let (mut data, singular_values) = if cols <= rows {
        let gram = ym.transpose() * ym;
        let evd = gram
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Factorization(format!("snapshot Gram eigendecomposition: {e:?}")))?;
        let (values, vectors) = descending(evd.S().column_vector().iter().copied(), evd.U());
        let sv: Vec<f64> = values.iter().map(|l| l.max(0.0).sqrt()).collect();
        let floor = sv[0] * f64::EPSILON * (rows.max(cols) as f64);
        if sv[n - 1] <= floor {
            return Err(Error::Factorization(format!(
                "snapshot matrix has numerical rank below {n} (σ_{n} = {:e})",
                sv[n - 1]
            )));
        }
        let mut data = Vec::with_capacity(rows * n);
        for k in 0..n {
            let u = vectors.col(k);
            let v = ym * u;
            data.extend(v.iter().map(|x| x / sv[k]));
        }
        // the Gram route loses orthogonality as σ_k / σ_1 shrinks
        reorthonormalize(&mut data, rows, n);
        (data, sv)
    } else {
        let cov = ym * ym.transpose();
        let evd = cov
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Factorization(format!("snapshot covariance eigendecomposition: {e:?}")))?;
        let (values, vectors) = descending(evd.S().column_vector().iter().copied(), evd.U());
        let sv: Vec<f64> = values.iter().take(rank_cap).map(|l| l.max(0.0).sqrt()).collect();
        let mut data = Vec::with_capacity(rows * n);
        for k in 0..n {
            data.extend(vectors.col(k).iter().copied());
        }
        (data, sv)
    };

    for col in data.chunks_exact_mut(rows) {
        fix_sign(col);
    }
    Ok(ReducedBasis {
        rows,
        n,
        data,
        singular_values,
    })
}

/// Eigenpairs sorted by descending eigenvalue (faer returns ascending).
fn descending(values: impl Iterator<Item = f64>, vectors: MatRef<'_, f64>) -> (Vec<f64>, Mat<f64>) {
    let values: Vec<f64> = values.collect();
    let k = values.len();
    let sorted: Vec<f64> = values.iter().rev().copied().collect();
    let vecs = Mat::from_fn(vectors.nrows(), k, |i, j| vectors[(i, k - 1 - j)]);
    (sorted, vecs)
}

/// Two passes of modified Gram-Schmidt over column-major `data`.
fn reorthonormalize(data: &mut [f64], rows: usize, n: usize) {
    for _ in 0..2 {
        for k in 0..n {
            let (done, rest) = data.split_at_mut(k * rows);
            let col = &mut rest[..rows];
            for j in 0..k {
                let prev = &done[j * rows..(j + 1) * rows];
                let c = dot(prev, col);
                for (x, p) in col.iter_mut().zip(prev) {
                    *x -= c * p;
                }
            }
            let norm = dot(col, col).sqrt();
            for x in col.iter_mut() {
                *x /= norm;
            }
        }
    }
}

fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        for v in col.iter_mut() {
            *v = -*v;
        }
    }
}
