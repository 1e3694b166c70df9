//! Fully connected network with rectifier hidden layers and a linear output.
//!
//! Batched tensors are feature-major: a batch of `B` samples with `d`
//! features is a `d × B` column-major matrix, one sample per column.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, column-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn w(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.weights, self.outputs, self.inputs)
    }

    #[inline]
    fn w_at(&self, row: usize, col: usize) -> f64 {
        self.weights[col * self.outputs + row]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

impl MlpNetwork {
    /// Zero-initialized network with the given layer widths (input first).
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must list at least two positive widths (got {layer_sizes:?})"
            )));
        }
        Ok(Self {
            layers: layer_sizes
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`) and zero biases.
    pub fn he_init<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for layer in &mut net.layers {
            let normal = Normal::new(0.0, (2.0 / layer.inputs as f64).sqrt())
                .expect("positive standard deviation");
            for w in &mut layer.weights {
                *w = normal.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::InvalidArgument(format!("layer {i} has inconsistent buffers")));
            }
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::dim("layer chaining", w[0].outputs, w[1].inputs));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Visits every parameter buffer in a fixed order (weights, then bias, per layer).
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        let mut k = 0;
        for l in &mut self.layers {
            f(k, &mut l.weights);
            f(k + 1, &mut l.bias);
            k += 2;
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), x.len()));
        }
        let last = self.layers.len() - 1;
        let mut a = x.to_vec();
        for (idx, l) in self.layers.iter().enumerate() {
            let mut z = l.bias.clone();
            for (j, &aj) in a.iter().enumerate() {
                if aj == 0.0 {
                    continue;
                }
                let col = &l.weights[j * l.outputs..(j + 1) * l.outputs];
                for (zi, wij) in z.iter_mut().zip(col) {
                    *zi += wij * aj;
                }
            }
            if idx != last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Batched forward pass; returns every layer's activation, input first.
    pub fn forward_batch(&self, x: MatRef<'_, f64>) -> Result<Vec<Mat<f64>>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::dim("mlp batch input", self.input_dim(), x.nrows()));
        }
        let b = x.ncols();
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (idx, l) in self.layers.iter().enumerate() {
            let mut z = Mat::from_fn(l.outputs, b, |i, _| l.bias[i]);
            matmul(z.as_mut(), Accum::Add, l.w(), acts[idx].as_ref(), 1.0, Par::Seq);
            if idx != last {
                relu_in_place(&mut z);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Backpropagates `d_out` (∂loss/∂output, `out × B`) through cached activations.
    pub fn backward(&self, acts: &[Mat<f64>], d_out: Mat<f64>) -> Gradients {
        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        let mut delta = d_out;
        for (idx, l) in self.layers.iter().enumerate().rev() {
            if idx != self.layers.len() - 1 {
                // rectifier derivative, read off the layer's own output
                let out = &acts[idx + 1];
                for j in 0..delta.ncols() {
                    for i in 0..delta.nrows() {
                        if out[(i, j)] <= 0.0 {
                            delta[(i, j)] = 0.0;
                        }
                    }
                }
            }
            let input = &acts[idx];
            let mut dw = Mat::<f64>::zeros(l.outputs, l.inputs);
            matmul(dw.as_mut(), Accum::Replace, delta.as_ref(), input.transpose(), 1.0, Par::Seq);
            let db: Vec<f64> = (0..l.outputs)
                .map(|i| (0..delta.ncols()).map(|j| delta[(i, j)]).sum())
                .collect();
            let mut g = DenseLayer::zeros(l.inputs, l.outputs);
            for j in 0..l.inputs {
                for i in 0..l.outputs {
                    g.weights[j * l.outputs + i] = dw[(i, j)];
                }
            }
            g.bias = db;
            grads.push(g);
            if idx > 0 {
                let mut prev = Mat::<f64>::zeros(l.inputs, delta.ncols());
                matmul(prev.as_mut(), Accum::Replace, l.w().transpose(), delta.as_ref(), 1.0, Par::Seq);
                delta = prev;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Weighted mean-squared error `Σ_k w_k (out_k − t_k)² / (B · out)` and its gradient.
    pub fn mse_gradient(
        &self,
        x: MatRef<'_, f64>,
        targets: MatRef<'_, f64>,
        weights: &[f64],
    ) -> Result<(f64, Gradients)> {
        let acts = self.forward_batch(x)?;
        let out = acts.last().unwrap();
        if targets.nrows() != out.nrows() || targets.ncols() != out.ncols() {
            return Err(Error::dim("mse targets", out.nrows() * out.ncols(), targets.nrows() * targets.ncols()));
        }
        let denom = (out.nrows() * out.ncols()) as f64;
        let mut loss = 0.0;
        let d_out = Mat::from_fn(out.nrows(), out.ncols(), |i, j| {
            let r = out[(i, j)] - targets[(i, j)];
            loss += weights[i] * r * r;
            2.0 * weights[i] * r / denom
        });
        let grads = self.backward(&acts, d_out);
        Ok((loss / denom, grads))
    }

    /// Weighted MSE without gradients.
    pub fn mse(&self, x: MatRef<'_, f64>, targets: MatRef<'_, f64>, weights: &[f64]) -> Result<f64> {
        let acts = self.forward_batch(x)?;
        let out = acts.last().unwrap();
        let mut loss = 0.0;
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                let r = out[(i, j)] - targets[(i, j)];
                loss += weights[i] * r * r;
            }
        }
        Ok(loss / (out.nrows() * out.ncols()) as f64)
    }

    /// `∂output/∂input` at `x` (`out × in`, row-major rows).
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), x.len()));
        }
        // forward, remembering which hidden units are active
        let last = self.layers.len() - 1;
        let mut masks: Vec<Vec<bool>> = Vec::with_capacity(last);
        let mut a = x.to_vec();
        for (idx, l) in self.layers.iter().enumerate() {
            let mut z = l.bias.clone();
            for (j, &aj) in a.iter().enumerate() {
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi += l.w_at(i, j) * aj;
                }
            }
            if idx != last {
                masks.push(z.iter().map(|&v| v > 0.0).collect());
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            a = z;
        }
        let mut jac = Vec::with_capacity(self.output_dim());
        for k in 0..self.output_dim() {
            let mut delta: Vec<f64> = (0..self.output_dim()).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
            for (idx, l) in self.layers.iter().enumerate().rev() {
                let mut prev = vec![0.0; l.inputs];
                for (j, p) in prev.iter_mut().enumerate() {
                    *p = (0..l.outputs).map(|i| l.w_at(i, j) * delta[i]).sum();
                }
                if idx > 0 {
                    for (p, active) in prev.iter_mut().zip(&masks[idx - 1]) {
                        if !active {
                            *p = 0.0;
                        }
                    }
                }
                delta = prev;
            }
            jac.push(delta);
        }
        Ok(jac)
    }
}

fn relu_in_place(m: &mut Mat<f64>) {
    for j in 0..m.ncols() {
        for v in m.col_as_slice_mut(j) {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNetwork::zeros(&[4, 8, 3]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn single_layer_is_affine() {
        let layer = DenseLayer {
            inputs: 2,
            outputs: 2,
            weights: vec![1.0, 3.0, 2.0, 4.0], // [[1, 2], [3, 4]]
            bias: vec![0.5, -0.5],
        };
        let net = MlpNetwork::from_layers(vec![layer]).unwrap();
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![3.5, 6.5]);
        assert_eq!(net.forward(&[-1.0, 0.0]).unwrap(), vec![-0.5, -3.5]);
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNetwork::he_init(&[5, 7, 6, 2], &mut rng).unwrap();
        let x = Mat::from_fn(5, 9, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let acts = net.forward_batch(x.as_ref()).unwrap();
        let out = acts.last().unwrap();
        for j in 0..9 {
            let col: Vec<f64> = x.col(j).iter().copied().collect();
            let single = net.forward(&col).unwrap();
            for i in 0..2 {
                assert!((single[i] - out[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = MlpNetwork::he_init(&[4, 10, 10, 3], &mut rng).unwrap();
        let x = [0.3, 0.7, 0.1, 0.9];
        let jac = net.input_jacobian(&x).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = net.forward(&xp).unwrap();
            let fm = net.forward(&xm).unwrap();
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let denom = fd.abs().max(jac[i][j].abs()).max(1e-8);
                assert!((fd - jac[i][j]).abs() / denom <= 1e-4, "({i},{j}): {fd} vs {}", jac[i][j]);
            }
        }
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut net = MlpNetwork::he_init(&[3, 6, 5, 2], &mut rng).unwrap();
            for l in net.layers_mut() {
                l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            let x = Mat::from_fn(3, 7, |_, _| rng.random_range(-1.0..1.0));
            let t = Mat::from_fn(2, 7, |_, _| rng.random_range(0.0..1.0));
            let w = [1.0, 0.5];
            let (_, grads) = net.mse_gradient(x.as_ref(), t.as_ref(), &w).unwrap();
            let analytic = grads.flat();
            let h = 1e-6;
            let mut fd = Vec::with_capacity(analytic.len());
            let count: Vec<usize> = net.layers().iter().flat_map(|l| [l.weights.len(), l.bias.len()]).collect();
            for (k, &len) in count.iter().enumerate() {
                for p in 0..len {
                    let perturbed = |delta: f64| {
                        let mut n2 = net.clone();
                        n2.for_each_param_mut(|kk, params| {
                            if kk == k {
                                params[p] += delta;
                            }
                        });
                        n2.mse(x.as_ref(), t.as_ref(), &w).unwrap()
                    };
                    fd.push((perturbed(h) - perturbed(-h)) / (2.0 * h));
                }
            }
            let diff: f64 = fd.iter().zip(&analytic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / norm <= 1e-4, "seed {seed}: {}", diff / norm);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(MlpNetwork::zeros(&[3]).is_err());
        let net = MlpNetwork::zeros(&[3, 2]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }
}
