//! Mini-batch Adam training with plateau learning-rate decay and early stopping.

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpNetwork};
use crate::fom::ParameterVector;
use crate::reduction::{ReducedBasis, SnapshotMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Widths of the hidden layers.
    pub hidden_layers: Vec<usize>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_patience: usize,
    pub early_stopping_patience: usize,
    pub validation_split: f64,
    pub loss_tol: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![80, 80],
            max_epochs: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_patience: 10,
            early_stopping_patience: 50,
            validation_split: 0.1,
            loss_tol: 1e-8,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training.{m}")));
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return bad("hidden_layers entries must be positive");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning_rate must be > 0 and lr_decay in (0, 1]");
        }
        if self.lr_patience == 0 || self.early_stopping_patience == 0 {
            return bad("patience values must be positive");
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return bad("validation_split must lie in (0, 1)");
        }
        if !(self.loss_tol > 0.0) {
            return bad("loss_tol must be positive");
        }
        Ok(())
    }
}

/// One-step training pairs stored in full space, so they can be re-projected
/// onto any basis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: SnapshotMatrix,
    pub mus: Vec<ParameterVector>,
    pub outputs: SnapshotMatrix,
}

/// Training pairs expressed in one particular basis.
#[derive(Debug, Clone)]
pub struct ReducedPairs {
    /// `n × S`
    pub y_in: Mat<f64>,
    /// `N_m × S`
    pub mu: Mat<f64>,
    /// `n × S`
    pub y_out: Mat<f64>,
}

impl TrainingSet {
    pub fn new(state_dim: usize) -> Self {
        Self {
            inputs: SnapshotMatrix::new(state_dim),
            mus: Vec::new(),
            outputs: SnapshotMatrix::new(state_dim),
        }
    }

    pub fn push(&mut self, input: &[f64], mu: ParameterVector, output: &[f64]) -> Result<()> {
        if !output.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("training target".into()));
        }
        self.inputs.push(input)?;
        self.outputs.push(output)?;
        self.mus.push(mu);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mus.is_empty()
    }

    pub fn reduced_pairs(&self, basis: &ReducedBasis) -> Result<ReducedPairs> {
        let y_in = basis.project_all(&self.inputs)?;
        let y_out = basis.project_all(&self.outputs)?;
        let m = self.mus.first().map_or(0, |v| v.len());
        let mu = Mat::from_fn(m, self.len(), |i, j| self.mus[j][i]);
        Ok(ReducedPairs { y_in, mu, y_out })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStop {
    LossTolerance,
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
    pub learning_rate: f64,
}

/// What happened during one call to [`train_network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub samples: usize,
    pub validation_samples: usize,
    pub initial_validation_loss: f64,
    pub best_validation_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop: TrainingStop,
    pub history: Vec<EpochLoss>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &MlpNetwork) -> Self {
        let shapes: Vec<usize> = net
            .layers()
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self {
            m: shapes.iter().map(|&s| vec![0.0; s]).collect(),
            v: shapes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut MlpNetwork, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let flat_grads: Vec<&[f64]> = grads
            .layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect();
        let (ms, vs) = (&mut self.m, &mut self.v);
        net.for_each_param_mut(|k, params| {
            let g = flat_grads[k];
            for (((p, gi), m), v) in params.iter_mut().zip(g).zip(ms[k].iter_mut()).zip(vs[k].iter_mut()) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gi;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gi * gi;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        });
    }
}

fn gather(src: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(src.nrows(), idx.len(), |i, j| src[(i, idx[j])])
}

/// Fits `net` to `targets` (both feature-major, one sample per column) under
/// the output-weighted MSE. Returns the weights with the lowest monitored
/// validation loss, which is never worse than the initial one.
pub fn train_network(
    mut net: MlpNetwork,
    inputs: MatRef<'_, f64>,
    targets: MatRef<'_, f64>,
    loss_weights: &[f64],
    cfg: &TrainingConfig,
) -> Result<(MlpNetwork, TrainingReport)> {
    cfg.validate()?;
    let s = inputs.ncols();
    if s == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if targets.ncols() != s {
        return Err(Error::dim("training targets", s, targets.ncols()));
    }
    if loss_weights.len() != net.output_dim() {
        return Err(Error::dim("loss weights", net.output_dim(), loss_weights.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(&mut rng);
    let n_val = if s >= 2 {
        ((cfg.validation_split * s as f64).round() as usize).clamp(1, s - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    // with a single sample, monitor the training loss instead
    let monitor_idx: Vec<usize> = if n_val > 0 { val_idx.to_vec() } else { train_idx.clone() };
    let x_mon = gather(inputs, &monitor_idx);
    let t_mon = gather(targets, &monitor_idx);

    let initial = net.mse(x_mon.as_ref(), t_mon.as_ref(), loss_weights)?;
    if !initial.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0, loss: initial });
    }
    let mut best = (initial, net.clone(), 0usize);
    let mut adam = Adam::new(&net);
    let mut lr = cfg.learning_rate;
    let mut since_best = 0usize;
    let mut since_lr = 0usize;
    let mut history = Vec::new();
    let mut stop = TrainingStop::MaxEpochs;
    let mut epochs_run = 0;

    if initial <= cfg.loss_tol {
        stop = TrainingStop::LossTolerance;
    } else {
        for epoch in 1..=cfg.max_epochs {
            epochs_run = epoch;
            train_idx.shuffle(&mut rng);
            let mut train_loss = 0.0;
            for batch in train_idx.chunks(cfg.batch_size) {
                let xb = gather(inputs, batch);
                let tb = gather(targets, batch);
                let (loss, grads) = net.mse_gradient(xb.as_ref(), tb.as_ref(), loss_weights)?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, loss });
                }
                train_loss += loss * batch.len() as f64;
                adam.step(&mut net, &grads, lr);
            }
            train_loss /= train_idx.len() as f64;
            let val = net.mse(x_mon.as_ref(), t_mon.as_ref(), loss_weights)?;
            if !val.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss: val });
            }
            history.push(EpochLoss {
                epoch,
                train: train_loss,
                validation: val,
                learning_rate: lr,
            });
            if val < best.0 {
                best = (val, net.clone(), epoch);
                since_best = 0;
                since_lr = 0;
            } else {
                since_best += 1;
                since_lr += 1;
            }
            if best.0 <= cfg.loss_tol {
                stop = TrainingStop::LossTolerance;
                break;
            }
            if since_best >= cfg.early_stopping_patience {
                stop = TrainingStop::EarlyStopping;
                break;
            }
            if since_lr >= cfg.lr_patience {
                lr *= cfg.lr_decay;
                since_lr = 0;
            }
        }
    }

    let (best_loss, best_net, best_epoch) = best;
    Ok((
        best_net,
        TrainingReport {
            samples: s,
            validation_samples: n_val,
            initial_validation_loss: initial,
            best_validation_loss: best_loss,
            best_epoch,
            epochs_run,
            stop,
            history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> TrainingConfig {
        TrainingConfig {
            hidden_layers: vec![],
            max_epochs: 3000,
            batch_size: 32,
            learning_rate: 1e-2,
            early_stopping_patience: 200,
            lr_patience: 50,
            ..Default::default()
        }
    }

    #[test]
    fn learns_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Mat::from_fn(3, 200, |i, j| ((i * 31 + j * 17) % 97) as f64 / 97.0);
        let t = Mat::from_fn(2, 200, |i, j| {
            if i == 0 {
                0.5 * x[(0, j)] - x[(1, j)] + 0.2 * x[(2, j)] + 0.1
            } else {
                -0.3 * x[(0, j)] + 0.8 * x[(2, j)] - 0.4
            }
        });
        let net = MlpNetwork::he_init(&[3, 2], &mut rng).unwrap();
        let (trained, report) = train_network(net, x.as_ref(), t.as_ref(), &[1.0, 1.0], &quick_cfg()).unwrap();
        assert!(report.best_validation_loss <= 1e-6, "{report:?}");
        assert!(trained.mse(x.as_ref(), t.as_ref(), &[1.0, 1.0]).unwrap() <= 1e-6);
    }

    #[test]
    fn best_weights_are_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Mat::from_fn(2, 60, |i, j| ((i + 1) * j) as f64 / 60.0);
        let t = Mat::from_fn(1, 60, |_, j| (x[(0, j)] * 6.0).sin());
        let net = MlpNetwork::he_init(&[2, 16, 1], &mut rng).unwrap();
        let cfg = TrainingConfig {
            max_epochs: 150,
            batch_size: 8,
            ..Default::default()
        };
        let (trained, report) = train_network(net, x.as_ref(), t.as_ref(), &[1.0], &cfg).unwrap();
        let min = report
            .history
            .iter()
            .map(|h| h.validation)
            .fold(report.initial_validation_loss, f64::min);
        assert_eq!(report.best_validation_loss, min);
        assert!(report.best_validation_loss <= report.initial_validation_loss);
        // recompute the monitored loss with the returned weights
        let mut order: Vec<usize> = (0..60).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let val = &order[..6];
        let v = trained
            .mse(gather(x.as_ref(), val).as_ref(), gather(t.as_ref(), val).as_ref(), &[1.0])
            .unwrap();
        assert_eq!(v, report.best_validation_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let x = Mat::from_fn(2, 40, |i, j| ((i * 3 + j) % 7) as f64);
        let t = Mat::from_fn(1, 40, |_, j| j as f64 / 40.0);
        let run = || {
            let net = MlpNetwork::he_init(&[2, 8, 1], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let cfg = TrainingConfig { max_epochs: 30, batch_size: 8, ..Default::default() };
            train_network(net, x.as_ref(), t.as_ref(), &[1.0], &cfg).unwrap().0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn diverging_inputs_are_reported() {
        let x = Mat::from_fn(1, 10, |_, j| if j == 3 { f64::INFINITY } else { j as f64 });
        let t = Mat::from_fn(1, 10, |_, _| 0.0);
        let net = MlpNetwork::he_init(&[1, 1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = TrainingConfig { max_epochs: 5, batch_size: 2, ..Default::default() };
        let err = train_network(net, x.as_ref(), t.as_ref(), &[1.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }));
    }
}
