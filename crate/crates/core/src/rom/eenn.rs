use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::MlpNetwork;
use super::train::{train_network, TrainingConfig, TrainingReport, TrainingSet};
use crate::fom::{FullOrderModel, FullState, ParameterSchedule, ParameterSpace, TimeGrid};
use crate::normalize::InputNormalizer;
use crate::reduction::{ReducedBasis, ReducedState, SnapshotMatrix};
use crate::{Error, Result};

/// A discrete-time model evolving reduced coordinates.
pub trait ReducedModel: Send + Sync {
    fn basis(&self) -> &ReducedBasis;

    fn dt(&self) -> f64;

    /// `y_{r,i+1}` from `y_{r,i}` and `μ_i`.
    fn step(&self, y_r: &[f64], mu: &[f64]) -> Result<ReducedState>;
}

/// Residual network time stepper `y_{r,i+1} = y_{r,i} + δt · g(y_{r,i}, μ_i)`.
///
/// `g` is the MLP evaluated on normalized `[y_r, μ]` with its output scaled
/// per coordinate by `output_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EennRom {
    pub basis: ReducedBasis,
    pub net: MlpNetwork,
    pub normalizer: InputNormalizer,
    pub output_scale: Vec<f64>,
    pub dt: f64,
}

impl EennRom {
    pub fn new(
        basis: ReducedBasis,
        net: MlpNetwork,
        normalizer: InputNormalizer,
        output_scale: Vec<f64>,
        dt: f64,
    ) -> Result<Self> {
        let n = basis.n();
        if net.output_dim() != n {
            return Err(Error::dim("network output width", n, net.output_dim()));
        }
        if net.input_dim() != normalizer.dim() {
            return Err(Error::dim("network input width", normalizer.dim(), net.input_dim()));
        }
        if output_scale.len() != n {
            return Err(Error::dim("output scale", n, output_scale.len()));
        }
        Ok(Self {
            basis,
            net,
            normalizer,
            output_scale,
            dt,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.normalizer.dim() - self.basis.n()
    }

    /// The learned right-hand side `g(y_r, μ)`.
    pub fn rhs(&self, y_r: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
        let n = self.basis.n();
        if y_r.len() != n {
            return Err(Error::dim("reduced state", n, y_r.len()));
        }
        let mut x = vec![0.0; self.normalizer.dim()];
        self.normalizer.apply_joint(y_r, mu, &mut x)?;
        let mut g = self.net.forward(&x)?;
        for (v, s) in g.iter_mut().zip(&self.output_scale) {
            *v *= s;
        }
        Ok(g)
    }
}

impl ReducedModel for EennRom {
    fn basis(&self) -> &ReducedBasis {
        &self.basis
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, y_r: &[f64], mu: &[f64]) -> Result<ReducedState> {
        eenn_step(self, y_r, mu)
    }
}

/// The FOM step Galerkin-projected onto a basis: `Vᵀ step(V y_r, μ)`.
///
/// Exact up to projection error; used as a reference model.
pub struct ProjectedFom<'a, F: FullOrderModel + ?Sized> {
    pub fom: &'a F,
    pub basis: ReducedBasis,
}

impl<F: FullOrderModel + ?Sized> ReducedModel for ProjectedFom<'_, F> {
    fn basis(&self) -> &ReducedBasis {
        &self.basis
    }

    fn dt(&self) -> f64 {
        self.fom.time_grid().dt
    }

    fn step(&self, y_r: &[f64], mu: &[f64]) -> Result<ReducedState> {
        let out = self
            .fom
            .lift_and_step(&self.basis, &ReducedState(y_r.to_vec()), mu, self.dt())?;
        self.basis.project(&out)
    }
}

/// `y_r + δt · g(y_r, μ)`; a non-finite result is an error, not clamped.
pub fn eenn_step(rom: &EennRom, y_r: &[f64], mu: &[f64]) -> Result<ReducedState> {
    let g = rom.rhs(y_r, mu)?;
    let next: Vec<f64> = y_r.iter().zip(&g).map(|(y, d)| y + rom.dt * d).collect();
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("EENN step output".into()));
    }
    Ok(ReducedState(next))
}

/// Iterates the model over `steps` steps with `μ_i = schedule(t_i)`;
/// the returned trajectory includes the initial state.
pub fn rollout<M: ReducedModel + ?Sized>(
    rom: &M,
    y_r0: &ReducedState,
    schedule: &ParameterSchedule,
    grid: &TimeGrid,
    steps: usize,
) -> Result<Vec<ReducedState>> {
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(y_r0.clone());
    for i in 0..steps {
        let mu = schedule.eval(grid.time(i));
        let next = rom
            .step(&traj[i], &mu)
            .map_err(|_| Error::RolloutDiverged { step: i + 1 })?;
        traj.push(next);
    }
    Ok(traj)
}

/// Lifts a reduced trajectory into full space, one column per state.
pub fn lift_trajectory(basis: &ReducedBasis, traj: &[ReducedState]) -> Result<SnapshotMatrix> {
    let mut out = SnapshotMatrix::with_capacity(basis.rows(), traj.len());
    for y in traj {
        out.push(&basis.reconstruct(y)?)?;
    }
    Ok(out)
}

/// Mean over columns of `‖y_pred − y_ref‖ / ‖y_ref‖`.
pub fn trajectory_relative_error(pred: &SnapshotMatrix, reference: &SnapshotMatrix) -> Result<f64> {
    if pred.nrows() != reference.nrows() || pred.ncols() != reference.ncols() {
        return Err(Error::dim("trajectory shapes", reference.data().len(), pred.data().len()));
    }
    if reference.ncols() == 0 {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut total = 0.0;
    for (i, (p, r)) in pred.columns().zip(reference.columns()).enumerate() {
        total += relative_error(p, r).map_err(|_| Error::ZeroNormReference { index: i })?;
    }
    Ok(total / reference.ncols() as f64)
}

/// `‖pred − reference‖ / ‖reference‖`.
pub fn relative_error(pred: &[f64], reference: &[f64]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        num += (p - r) * (p - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(Error::ZeroNormReference { index: 0 });
    }
    Ok((num / den).sqrt())
}

/// Full-space relative error of one ROM step from `y_r` against the FOM output.
pub fn one_step_error<M: ReducedModel + ?Sized>(
    rom: &M,
    y_r: &[f64],
    mu: &[f64],
    reference: &FullState,
) -> Result<f64> {
    let next = rom.step(y_r, mu)?;
    let lifted = rom.basis().reconstruct(&next)?;
    relative_error(&lifted, reference)
}

/// Builds and trains an EENN on `data` re-projected onto `basis`.
///
/// Reduced inputs are normalized by their observed range and parameters by
/// `space`; targets `(y_{r,i+1} − y_{r,i})/δt` are scaled per coordinate by their
/// standard deviation. The optimized loss is the MSE of `y_{r,i+1}`.
pub fn train_eenn(
    basis: &ReducedBasis,
    data: &TrainingSet,
    space: &ParameterSpace,
    dt: f64,
    cfg: &TrainingConfig,
) -> Result<(EennRom, TrainingReport)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive (got {dt})")));
    }
    let pairs = data.reduced_pairs(basis)?;
    let n = basis.n();
    let m = space.dim();
    if pairs.mu.nrows() != m {
        return Err(Error::dim("training parameters", m, pairs.mu.nrows()));
    }
    let s = data.len();

    let mut lower: Vec<f64> = (0..n)
        .map(|i| (0..s).map(|j| pairs.y_in[(i, j)]).fold(f64::INFINITY, f64::min))
        .collect();
    let mut upper: Vec<f64> = (0..n)
        .map(|i| (0..s).map(|j| pairs.y_in[(i, j)]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    lower.extend_from_slice(space.lower());
    upper.extend_from_slice(space.upper());
    let normalizer = InputNormalizer::from_bounds(&lower, &upper)?;

    let rates = Mat::from_fn(n, s, |i, j| (pairs.y_out[(i, j)] - pairs.y_in[(i, j)]) / dt);
    let output_scale: Vec<f64> = (0..n)
        .map(|i| {
            let mean = (0..s).map(|j| rates[(i, j)]).sum::<f64>() / s as f64;
            let var = (0..s).map(|j| (rates[(i, j)] - mean).powi(2)).sum::<f64>() / s as f64;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();

    let inputs = Mat::from_fn(n + m, s, |i, j| {
        let v = if i < n { pairs.y_in[(i, j)] } else { pairs.mu[(i - n, j)] };
        (v - normalizer.shift[i]) / normalizer.scale[i]
    });
    let targets = Mat::from_fn(n, s, |i, j| rates[(i, j)] / output_scale[i]);
    let loss_weights: Vec<f64> = output_scale.iter().map(|sc| (dt * sc).powi(2)).collect();

    let mut sizes = vec![n + m];
    sizes.extend_from_slice(&cfg.hidden_layers);
    sizes.push(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_1417);
    let net = MlpNetwork::he_init(&sizes, &mut rng)?;
    let (net, report) = train_network(net, inputs.as_ref(), targets.as_ref(), &loss_weights, cfg)?;
    let rom = EennRom::new(basis.clone(), net, normalizer, output_scale, dt)?;
    Ok((rom, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::ParameterVector;
    use crate::reduction::pod;
    use crate::rom::mlp::DenseLayer;

    fn identity_basis(n: usize) -> ReducedBasis {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        ReducedBasis::from_parts(n, n, data, vec![1.0; n]).unwrap()
    }

    fn linear_rom(dt: f64) -> EennRom {
        // g(x) = W x + b with x = [y1, y2, mu] unnormalized
        let layer = DenseLayer {
            inputs: 3,
            outputs: 2,
            weights: vec![1.0, 0.5, -2.0, 0.0, 0.25, 1.0],
            bias: vec![0.1, -0.2],
        };
        EennRom::new(
            identity_basis(2),
            MlpNetwork::from_layers(vec![layer]).unwrap(),
            InputNormalizer::identity(3),
            vec![1.0, 1.0],
            dt,
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_linear_step() {
        let rom = linear_rom(0.1);
        let y = [1.0, 2.0];
        let mu = [4.0];
        // W = [[1, -2, 0.25], [0.5, 0, 1]]
        let g0 = 1.0 * 1.0 - 2.0 * 2.0 + 0.25 * 4.0 + 0.1;
        let g1 = 0.5 * 1.0 + 0.0 * 2.0 + 1.0 * 4.0 - 0.2;
        let next = eenn_step(&rom, &y, &mu).unwrap();
        assert!((next[0] - (1.0 + 0.1 * g0)).abs() < 1e-14);
        assert!((next[1] - (2.0 + 0.1 * g1)).abs() < 1e-14);
    }

    #[test]
    fn residual_identity() {
        let mut rom = linear_rom(0.1);
        rom.net = MlpNetwork::zeros(&[3, 5, 2]).unwrap();
        let y = [0.3, -7.0];
        assert_eq!(eenn_step(&rom, &y, &[1.0]).unwrap().0, y.to_vec());
        let mut rom0 = linear_rom(0.0);
        rom0.dt = 0.0;
        assert_eq!(eenn_step(&rom0, &y, &[1.0]).unwrap().0, y.to_vec());
        // linear in dt
        let a = linear_rom(0.1);
        let b = linear_rom(0.3);
        let da: Vec<f64> = eenn_step(&a, &y, &[2.0]).unwrap().iter().zip(&y).map(|(n, o)| n - o).collect();
        let db: Vec<f64> = eenn_step(&b, &y, &[2.0]).unwrap().iter().zip(&y).map(|(n, o)| n - o).collect();
        for (x, z) in da.iter().zip(&db) {
            assert!((3.0 * x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn rollout_shapes_and_consistency() {
        let rom = linear_rom(0.01);
        let grid = TimeGrid { t0: 0.0, dt: 0.01, steps: 10 };
        let sched = ParameterSchedule::constant(0.0, 0.1, ParameterVector(vec![1.0])).unwrap();
        let y0 = ReducedState(vec![1.0, 1.0]);
        assert_eq!(rollout(&rom, &y0, &sched, &grid, 0).unwrap(), vec![y0.clone()]);
        let traj = rollout(&rom, &y0, &sched, &grid, 10).unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(traj[1], eenn_step(&rom, &y0, &[1.0]).unwrap());

        let mut flat = rom.clone();
        flat.net = MlpNetwork::zeros(&[3, 2]).unwrap();
        assert!(rollout(&flat, &y0, &sched, &grid, 10).unwrap().iter().all(|y| *y == y0));
    }

    #[test]
    fn relative_errors() {
        let r = SnapshotMatrix::from_column_major(2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        assert_eq!(trajectory_relative_error(&r, &r).unwrap(), 0.0);
        let scaled = SnapshotMatrix::from_column_major(2, r.data().iter().map(|v| 1.1 * v).collect()).unwrap();
        assert!((trajectory_relative_error(&scaled, &r).unwrap() - 0.1).abs() < 1e-12);
        let zero = SnapshotMatrix::from_column_major(2, vec![0.0; 4]).unwrap();
        assert!(trajectory_relative_error(&r, &zero).is_err());
    }

    #[test]
    fn one_step_error_cases() {
        let rom = linear_rom(0.1);
        let y = [1.0, 2.0];
        let next = eenn_step(&rom, &y, &[4.0]).unwrap();
        let exact = FullState(next.0.clone());
        assert_eq!(one_step_error(&rom, &y, &[4.0], &exact).unwrap(), 0.0);

        let mut zero = rom.clone();
        zero.net = MlpNetwork::zeros(&[3, 2]).unwrap();
        let origin = [0.0, 0.0];
        let reference = FullState(vec![3.0, -4.0]);
        assert_eq!(one_step_error(&zero, &origin, &[0.0], &reference).unwrap(), 1.0);

        // 3-dim hand case: lifted output (1, 2, 2), reference (1, 2, 3) → 1/√14
        let mut rom3 = EennRom::new(
            identity_basis(3),
            MlpNetwork::zeros(&[4, 3]).unwrap(),
            InputNormalizer::identity(4),
            vec![1.0; 3],
            0.1,
        )
        .unwrap();
        rom3.net.layers_mut()[0].bias = vec![0.0, 0.0, 0.0];
        let e = one_step_error(&rom3, &[1.0, 2.0, 2.0], &[0.0], &FullState(vec![1.0, 2.0, 3.0])).unwrap();
        assert!((e - 1.0 / 14f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn learns_constant_dynamics() {
        // y_{r,i+1} = y_{r,i}: the network must learn g ≈ 0
        let n = 3;
        let mut set = TrainingSet::new(6);
        let mut snaps = SnapshotMatrix::new(6);
        for j in 0..60 {
            let s: Vec<f64> = (0..6).map(|i| ((i * 13 + j * 7) % 17) as f64).collect();
            snaps.push(&s).unwrap();
            set.push(&s, ParameterVector(vec![(j % 5) as f64]), &s).unwrap();
        }
        let basis = pod(&snaps, n).unwrap();
        let space = ParameterSpace::cube(1, 0.0, 4.0).unwrap();
        let cfg = TrainingConfig {
            hidden_layers: vec![8],
            max_epochs: 4000,
            batch_size: 16,
            early_stopping_patience: 400,
            lr_patience: 100,
            ..Default::default()
        };
        let (rom, report) = train_eenn(&basis, &set, &space, 0.02, &cfg).unwrap();
        assert!(report.best_validation_loss < 0.1 * report.initial_validation_loss);
        assert!(report.best_validation_loss < 1e-5, "{}", report.best_validation_loss);
        let y = basis.project(snaps.column(0)).unwrap();
        let next = rom.step(&y, &[0.0]).unwrap();
        assert!(relative_error(&next, &y).unwrap() < 1e-2);
    }
}
