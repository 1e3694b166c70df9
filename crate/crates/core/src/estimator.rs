//! Noise-free Gaussian-process interpolation of one-step errors over the
//! normalized joint space.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::{par, Error, Result};

/// Squared-exponential kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernelParams {
    pub sigma_f: f64,
    pub l: f64,
}

impl RbfKernelParams {
    pub fn new(sigma_f: f64, l: f64) -> Result<Self> {
        if !(sigma_f > 0.0 && sigma_f.is_finite() && l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel parameters must be positive (got sigma_f = {sigma_f}, l = {l})"
            )));
        }
        Ok(Self { sigma_f, l })
    }

    fn from_sq_dist(&self, d2: f64) -> f64 {
        self.sigma_f * self.sigma_f * (-d2 / (2.0 * self.l * self.l)).exp()
    }
}

/// `σ_f² exp(−‖a − b‖² / (2 l²))`.
pub fn rbf_kernel(a: &[f64], b: &[f64], params: &RbfKernelParams) -> f64 {
    params.from_sq_dist(sq_dist(a, b))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// A fitted interpolator `ê(x) = k(x, I) α` with `α = (K(I, I) + jitter·σ_f²·I)⁻¹ e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub params: RbfKernelParams,
    /// Training inputs, one row-major point of width `dim` after another.
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub alpha: Vec<f64>,
    /// Diagonal regularization actually used, relative to `σ_f²`.
    pub jitter: f64,
}

struct Factored {
    llt: faer::linalg::solvers::Llt<f64>,
    jitter: f64,
}

/// Cholesky of `K + jitter·σ_f²·I`, escalating the jitter tenfold on failure.
fn factor_kernel(sq_dists: MatRef<'_, f64>, params: &RbfKernelParams) -> Result<Factored> {
    let n = sq_dists.nrows();
    let s2 = params.sigma_f * params.sigma_f;
    let base = Mat::from_fn(n, n, |i, j| params.from_sq_dist(sq_dists[(i, j)]));
    let mut jitter = JITTER_START;
    loop {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += jitter * s2;
        }
        if let Ok(llt) = k.llt(Side::Lower) {
            return Ok(Factored { llt, jitter });
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::Factorization(format!(
                "kernel matrix not positive definite up to jitter {JITTER_MAX:e} (l = {})",
                params.l
            )));
        }
    }
}

fn pairwise_sq_dists(points: &[f64], dim: usize) -> Mat<f64> {
    let n = points.len() / dim;
    let rows = par::map_range(n, |i| {
        let a = &points[i * dim..(i + 1) * dim];
        (0..n)
            .map(|j| sq_dist(a, &points[j * dim..(j + 1) * dim]))
            .collect::<Vec<_>>()
    });
    Mat::from_fn(n, n, |i, j| rows[i][j])
}

fn check_inputs(points: &[f64], dim: usize, errors: &[f64]) -> Result<()> {
    if dim == 0 || points.len() != errors.len() * dim {
        return Err(Error::dim("GP inputs", errors.len() * dim, points.len()));
    }
    if errors.is_empty() {
        return Err(Error::InvalidArgument("GP needs at least one training point".into()));
    }
    if !points.iter().chain(errors).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("GP training data".into()));
    }
    Ok(())
}

impl GprModel {
    /// Fits the interpolator to `errors` at the normalized `points`
    /// (row-major, `errors.len()` points of width `dim`).
    pub fn fit(points: &[f64], dim: usize, errors: &[f64], params: RbfKernelParams) -> Result<Self> {
        check_inputs(points, dim, errors)?;
        let d2 = pairwise_sq_dists(points, dim);
        Self::fit_with_dists(points, dim, errors, params, d2.as_ref())
    }

    fn fit_with_dists(
        points: &[f64],
        dim: usize,
        errors: &[f64],
        params: RbfKernelParams,
        d2: MatRef<'_, f64>,
    ) -> Result<Self> {
        let f = factor_kernel(d2, &params)?;
        let rhs = Mat::from_fn(errors.len(), 1, |i, _| errors[i]);
        let alpha_mat = f.llt.solve(&rhs);
        let alpha: Vec<f64> = (0..errors.len()).map(|i| alpha_mat[(i, 0)]).collect();
        if !alpha.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("GP weights".into()));
        }
        Ok(Self {
            params,
            inputs: points.to_vec(),
            dim,
            alpha,
            jitter: f.jitter,
        })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::dim("GP query", self.dim, x.len()));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| self.alpha[i] * rbf_kernel(x, self.point(i), &self.params))
            .sum()
    }

    /// Predictions at row-major `points`, in input order.
    pub fn predict_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        if points.len() % self.dim != 0 {
            return Err(Error::dim("GP batch query", self.dim, points.len() % self.dim));
        }
        let n = points.len() / self.dim;
        Ok(par::map_range(n, |j| {
            self.predict_unchecked(&points[j * self.dim..(j + 1) * self.dim])
        }))
    }

    /// `∇ê(x)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::dim("GP query", self.dim, x.len()));
        }
        let mut g = vec![0.0; self.dim];
        let l2 = self.params.l * self.params.l;
        for i in 0..self.len() {
            let p = self.point(i);
            let w = self.alpha[i] * rbf_kernel(x, p, &self.params) / l2;
            for (gk, (xk, pk)) in g.iter_mut().zip(x.iter().zip(p)) {
                *gk -= w * (xk - pk);
            }
        }
        Ok(g)
    }
}

/// Outcome of the lengthscale search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedKernel {
    pub params: RbfKernelParams,
    /// Set when the errors have (numerically) zero spread.
    pub degenerate: bool,
    /// `(l, log marginal likelihood)` at every grid point; `-∞` where the
    /// kernel could not be factored.
    pub grid: Vec<(f64, f64)>,
}

pub const LENGTHSCALE_GRID: (f64, f64, usize) = (0.05, 5.0, 20);
const SIGMA_FLOOR: f64 = 1e-12;

pub fn lengthscale_grid() -> Vec<f64> {
    let (lo, hi, k) = LENGTHSCALE_GRID;
    let step = (hi / lo).ln() / (k - 1) as f64;
    (0..k).map(|i| lo * (step * i as f64).exp()).collect()
}

fn log_marginal_likelihood(errors: &[f64], f: &Factored) -> f64 {
    let n = errors.len();
    let rhs = Mat::from_fn(n, 1, |i, _| errors[i]);
    let alpha = f.llt.solve(&rhs);
    let fit: f64 = (0..n).map(|i| errors[i] * alpha[(i, 0)]).sum();
    let l = f.llt.L();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * fit - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// `σ_f` = standard deviation of `errors`; `l` maximizes the log marginal
/// likelihood over a logarithmic grid.
pub fn tune_hyperparams(points: &[f64], dim: usize, errors: &[f64]) -> Result<TunedKernel> {
    check_inputs(points, dim, errors)?;
    if errors.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "lengthscale search needs at least 5 points (got {})",
            errors.len()
        )));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let sd = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let degenerate = !(sd > SIGMA_FLOOR);
    let sigma_f = if degenerate { SIGMA_FLOOR } else { sd };
    let d2 = pairwise_sq_dists(points, dim);
    let mut grid = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for l in lengthscale_grid() {
        let params = RbfKernelParams::new(sigma_f, l)?;
        let ll = match factor_kernel(d2.as_ref(), &params) {
            Ok(f) => log_marginal_likelihood(errors, &f),
            Err(_) => f64::NEG_INFINITY,
        };
        grid.push((l, ll));
        if ll.is_finite() && best.is_none_or(|(_, b)| ll > b) {
            best = Some((l, ll));
        }
    }
    let l = match best {
        Some((l, _)) => l,
        None => {
            return Err(Error::Factorization(
                "no lengthscale on the grid gives a factorizable kernel".into(),
            ))
        }
    };
    Ok(TunedKernel {
        params: RbfKernelParams::new(sigma_f, l)?,
        degenerate,
        grid,
    })
}

/// Tunes the lengthscale and fits in one pass over the distance matrix.
pub fn tune_and_fit(points: &[f64], dim: usize, errors: &[f64]) -> Result<(GprModel, TunedKernel)> {
    let tuned = tune_hyperparams(points, dim, errors)?;
    let d2 = pairwise_sq_dists(points, dim);
    let model = GprModel::fit_with_dists(points, dim, errors, tuned.params, d2.as_ref())?;
    Ok((model, tuned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
        (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn kernel_values() {
        let p = RbfKernelParams::new(2.0, 0.7).unwrap();
        assert_eq!(rbf_kernel(&[0.3, 0.1], &[0.3, 0.1], &p), 4.0);
        let unit = RbfKernelParams::new(1.0, 0.5).unwrap();
        let d = 0.5 * 2f64.sqrt();
        assert!((rbf_kernel(&[0.0, 0.0], &[d, 0.0], &unit) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(rbf_kernel(&[0.1, 0.9], &[0.4, 0.2], &p), rbf_kernel(&[0.4, 0.2], &[0.1, 0.9], &p));
        assert!(RbfKernelParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn one_point_interpolates() {
        let p = RbfKernelParams::new(0.3, 0.4).unwrap();
        let gp = GprModel::fit(&[0.2, 0.5], 2, &[0.07], p).unwrap();
        assert!((gp.predict(&[0.2, 0.5]).unwrap() - 0.07).abs() < 1e-8);
        assert!(gp.predict(&[50.0, 50.0]).unwrap().abs() < 1e-6);
        assert!(gp.predict(&[0.2]).is_err());
    }

    #[test]
    fn two_points_hand_solve() {
        let p = RbfKernelParams::new(1.0, 1.0).unwrap();
        let gp = GprModel::fit(&[0.0, 1.0], 1, &[1.0, 2.0], p).unwrap();
        // K = [[1, k], [k, 1]] with k = e^{-1/2}
        let k = (-0.5f64).exp();
        let det = 1.0 - k * k;
        let a0 = (1.0 - k * 2.0) / det;
        let a1 = (2.0 - k * 1.0) / det;
        assert!((gp.alpha[0] - a0).abs() < 1e-8);
        assert!((gp.alpha[1] - a1).abs() < 1e-8);
        assert_eq!(gp.jitter, 1e-10);
    }

    #[test]
    fn interpolates_fifty_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_points(&mut rng, 50, 3);
        let e: Vec<f64> = (0..50).map(|_| rng.random_range(0.001..0.05)).collect();
        let gp = GprModel::fit(&x, 3, &e, RbfKernelParams::new(0.01, 0.1).unwrap()).unwrap();
        for i in 0..50 {
            let p = gp.predict(&x[i * 3..i * 3 + 3]).unwrap();
            assert!((p - e[i]).abs() <= 1e-6 * e[i], "{i}: {p} vs {}", e[i]);
        }
        let batch = gp.predict_batch(&x).unwrap();
        for i in 0..50 {
            assert_eq!(batch[i], gp.predict(&x[i * 3..i * 3 + 3]).unwrap());
        }
    }

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [1usize, 5, 12, 20] {
            let x = random_points(&mut rng, n, 4);
            let e: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.1)).collect();
            let p = RbfKernelParams::new(0.05, 0.3).unwrap();
            let gp = GprModel::fit(&x, 4, &e, p).unwrap();
            let k = nalgebra::DMatrix::from_fn(n, n, |i, j| {
                rbf_kernel(&x[i * 4..i * 4 + 4], &x[j * 4..j * 4 + 4], &p)
                    + if i == j { gp.jitter * p.sigma_f * p.sigma_f } else { 0.0 }
            });
            let alpha = k.lu().solve(&nalgebra::DVector::from_column_slice(&e)).unwrap();
            let q = random_points(&mut rng, 1, 4);
            let dense: f64 = (0..n).map(|i| alpha[i] * rbf_kernel(&q, &x[i * 4..i * 4 + 4], &p)).sum();
            assert!((gp.predict(&q).unwrap() - dense).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = random_points(&mut rng, 30, 3);
        let e: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..0.1)).collect();
        let gp = GprModel::fit(&x, 3, &e, RbfKernelParams::new(0.03, 0.4).unwrap()).unwrap();
        for _ in 0..10 {
            let q = random_points(&mut rng, 1, 3);
            let g = gp.gradient(&q).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                let fd = (gp.predict(&qp).unwrap() - gp.predict(&qm).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn lengthscale_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 200;
        let x = random_points(&mut rng, n, 2);
        let truth = RbfKernelParams::new(1.0, 0.5).unwrap();
        let k = nalgebra::DMatrix::from_fn(n, n, |i, j| rbf_kernel(&x[i * 2..i * 2 + 2], &x[j * 2..j * 2 + 2], &truth));
        // sample with the same diagonal regularization the fit starts from
        let eig = k.symmetric_eigen();
        let z = nalgebra::DVector::from_fn(n, |_, _| {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            v
        });
        let scaled = nalgebra::DVector::from_fn(n, |i, _| (eig.eigenvalues[i].max(0.0) + 1e-10).sqrt() * z[i]);
        let sample = &eig.eigenvectors * scaled;
        let errors: Vec<f64> = sample.iter().copied().collect();
        let tuned = tune_hyperparams(&x, 2, &errors).unwrap();
        let grid = lengthscale_grid();
        let pos = grid.iter().position(|&g| g == tuned.params.l).unwrap();
        let truth_pos = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.ln() - 0.5f64.ln()).abs().total_cmp(&(b.1.ln() - 0.5f64.ln()).abs()))
            .unwrap()
            .0;
        assert!(pos.abs_diff(truth_pos) <= 1, "picked {} ({pos}) vs {truth_pos}: {:?}", tuned.params.l, tuned.grid);
        // definitional: the pick is the argmax of the evaluated likelihoods
        let best = tuned.grid.iter().copied().fold(f64::NEG_INFINITY, |m, (_, ll)| m.max(ll));
        assert_eq!(tuned.grid[pos].1, best);
        assert!(!tuned.degenerate);
    }

    #[test]
    fn constant_errors_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_points(&mut rng, 10, 2);
        let tuned = tune_hyperparams(&x, 2, &[0.02; 10]).unwrap();
        assert!(tuned.degenerate);
        assert_eq!(tuned.params.sigma_f, 1e-12);
        assert!(tune_hyperparams(&x[..8], 2, &[0.1; 4]).is_err());
    }
}
