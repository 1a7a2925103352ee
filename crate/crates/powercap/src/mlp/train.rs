//! Mini-batch Adam training on mean squared error, and the finite-difference
//! gradient check used to validate backpropagation.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{FeatureNorm, NeuralNet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of the dataset held out for validation, in (0, 0.5].
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 400,
            seed: 0,
            validation_fraction: 0.1,
            early_stop_patience: 80,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidParameter(
                "batch_size, epochs and early_stop_patience must be > 0".into(),
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::InvalidParameter(
                "validation_fraction must lie in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch losses in target units (not normalized space).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Parameter gradients, one (weights, biases) pair per layer.
struct Gradients {
    d_weights: Vec<Vec<f64>>,
    d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(net: &NeuralNet) -> Self {
        Self {
            d_weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            d_biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn zero_out(&mut self) {
        for w in &mut self.d_weights {
            w.fill(0.0);
        }
        for b in &mut self.d_biases {
            b.fill(0.0);
        }
    }
}

/// Forward pass caching post-activation values per layer (normalized space).
fn forward_cached(net: &NeuralNet, input: &[f64], acts: &mut Vec<Vec<f64>>) {
    acts.clear();
    let mut x = vec![0.0; input.len()];
    for j in 0..input.len() {
        x[j] = (input[j] - net.input_norm.mean[j]) / net.input_norm.scale[j];
    }
    acts.push(x);
    for layer in &net.layers {
        let prev = acts.last().unwrap();
        let mut out = vec![0.0; layer.out_dim];
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut z = layer.biases[o];
            for (w, a) in row.iter().zip(prev.iter()) {
                z += w * a;
            }
            out[o] = layer.activation.apply(z);
        }
        acts.push(out);
    }
}

/// Accumulates MSE loss (target units) and its parameter gradients over
/// `samples`; both are averaged over samples and output dimensions.
fn batch_loss_and_gradients(
    net: &NeuralNet,
    samples: &[(Vec<f64>, Vec<f64>)],
    grads: &mut Gradients,
) -> f64 {
    grads.zero_out();
    let out_dim = net.output_dim();
    let denom = (samples.len() * out_dim) as f64;
    let mut loss = 0.0;
    let mut acts: Vec<Vec<f64>> = Vec::new();
    let n_layers = net.layers.len();
    let mut delta = vec![0.0; 0];
    for (input, target) in samples {
        forward_cached(net, input, &mut acts);
        let y_norm = &acts[n_layers];
        // Loss and output-layer gradient in physical units.
        delta.clear();
        delta.resize(out_dim, 0.0);
        for j in 0..out_dim {
            let pred = y_norm[j] * net.output_norm.scale[j] + net.output_norm.mean[j];
            let err = pred - target[j];
            loss += err * err / denom;
            delta[j] = 2.0 * err * net.output_norm.scale[j] / denom;
        }
        // Backward through the layers.
        for l in (0..n_layers).rev() {
            let layer = &net.layers[l];
            // delta currently holds dL/da_l; fold in the activation slope.
            for (d, y) in delta.iter_mut().zip(acts[l + 1].iter()) {
                *d *= layer.activation.grad_from_output(*y);
            }
            let prev = &acts[l];
            let dw = &mut grads.d_weights[l];
            for o in 0..layer.out_dim {
                let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                let d = delta[o];
                for (g, a) in row.iter_mut().zip(prev.iter()) {
                    *g += d * a;
                }
                grads.d_biases[l][o] += d;
            }
            if l > 0 {
                let mut next = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let d = delta[o];
                    for (n, w) in next.iter_mut().zip(row.iter()) {
                        *n += d * w;
                    }
                }
                delta = next;
            }
        }
    }
    loss
}

/// MSE over a sample set in target units.
fn mse(net: &NeuralNet, samples: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut s = net.scratch();
    let out_dim = net.output_dim();
    let mut loss = 0.0;
    for (input, target) in samples {
        let pred = net.forward_with(input, &mut s).expect("shapes checked");
        for j in 0..out_dim {
            let e = pred[j] - target[j];
            loss += e * e;
        }
    }
    loss / (samples.len() * out_dim) as f64
}

/// Mini-batch Adam on MSE. Splits off a validation set, computes the
/// input/output normalization from the training split, and returns the
/// best-validation snapshot together with the loss history.
pub fn train(
    net: &NeuralNet,
    dataset: &[(Vec<f64>, Vec<f64>)],
    cfg: &TrainConfig,
) -> Result<(NeuralNet, Vec<LossRecord>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let in_dim = net.input_dim();
    let out_dim = net.output_dim();
    for (k, (x, y)) in dataset.iter().enumerate() {
        if x.len() != in_dim || y.len() != out_dim {
            return Err(Error::InvalidDataset(format!(
                "sample {k} has shape ({}, {}), net expects ({in_dim}, {out_dim})",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("sample {k} is not finite")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(&mut rng);
    let n_val = if dataset.len() < 2 {
        0
    } else {
        ((dataset.len() as f64 * cfg.validation_fraction).round() as usize)
            .clamp(1, dataset.len() - 1)
    };
    let (val_idx, train_idx) = indices.split_at(n_val);
    let train_set: Vec<(Vec<f64>, Vec<f64>)> =
        train_idx.iter().map(|&k| dataset[k].clone()).collect();
    let val_set: Vec<(Vec<f64>, Vec<f64>)> = if n_val == 0 {
        train_set.clone()
    } else {
        val_idx.iter().map(|&k| dataset[k].clone()).collect()
    };

    let mut model = net.clone();
    model.input_norm = FeatureNorm::from_rows(train_set.iter().map(|(x, _)| x.as_slice()), in_dim);
    model.output_norm =
        FeatureNorm::from_rows(train_set.iter().map(|(_, y)| y.as_slice()), out_dim);

    let mut grads = Gradients::zeros(&model);
    let mut m_w: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut v_w = m_w.clone();
    let mut m_b: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect();
    let mut v_b = m_b.clone();
    let mut t = 0i32;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> =
                chunk.iter().map(|&k| train_set[k].clone()).collect();
            let loss = batch_loss_and_gradients(&model, &batch, &mut grads);
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch });
            }
            epoch_loss += loss;
            batches += 1;

            t += 1;
            let bc1 = 1.0 - 0.9f64.powi(t);
            let bc2 = 1.0 - 0.999f64.powi(t);
            for (l, layer) in model.layers.iter_mut().enumerate() {
                adam_update(
                    &mut layer.weights,
                    &grads.d_weights[l],
                    &mut m_w[l],
                    &mut v_w[l],
                    cfg.learning_rate,
                    bc1,
                    bc2,
                );
                adam_update(
                    &mut layer.biases,
                    &grads.d_biases[l],
                    &mut m_b[l],
                    &mut v_b[l],
                    cfg.learning_rate,
                    bc1,
                    bc2,
                );
            }
        }
        let train_mse = epoch_loss / batches.max(1) as f64;
        let val_mse = mse(&model, &val_set);
        if !val_mse.is_finite() {
            return Err(Error::NanLoss { epoch });
        }
        history.push(LossRecord {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok((best, history))
}

#[inline]
fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bias_corr1: f64,
    bias_corr2: f64,
) {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    for k in 0..params.len() {
        let g = grads[k];
        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
        let m_hat = m[k] / bias_corr1;
        let v_hat = v[k] / bias_corr2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
    }
}

/// Maximum relative disagreement between backprop gradients and central
/// finite differences of the batch loss, over every weight and bias.
pub fn gradient_check(net: &NeuralNet, samples: &[(Vec<f64>, Vec<f64>)], h: f64) -> f64 {
    let mut grads = Gradients::zeros(net);
    batch_loss_and_gradients(net, samples, &mut grads);
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let n_layers = net.layers.len();
    for l in 0..n_layers {
        for k in 0..net.layers[l].weights.len() {
            let orig = probe.layers[l].weights[k];
            probe.layers[l].weights[k] = orig + h;
            let up = mse(&probe, samples);
            probe.layers[l].weights[k] = orig - h;
            let down = mse(&probe, samples);
            probe.layers[l].weights[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.d_weights[l][k];
            worst = worst.max(rel_err(analytic, numeric));
        }
        for k in 0..net.layers[l].biases.len() {
            let orig = probe.layers[l].biases[k];
            probe.layers[l].biases[k] = orig + h;
            let up = mse(&probe, samples);
            probe.layers[l].biases[k] = orig - h;
            let down = mse(&probe, samples);
            probe.layers[l].biases[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.d_biases[l][k];
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, NeuralNet};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 5e-3,
            batch_size: 32,
            epochs,
            seed: 7,
            validation_fraction: 0.2,
            early_stop_patience: epochs,
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let net = NeuralNet::glorot(&[2, 4, 1], Activation::Tanh, 0);
        assert!(train(&net, &[], &quick_cfg(10)).is_err());
    }

    #[test]
    fn constant_dataset_converges_to_constant_predictor() {
        let net = NeuralNet::glorot(&[2, 8, 1], Activation::Tanh, 1);
        let dataset: Vec<_> = (0..64).map(|_| (vec![0.4, -1.0], vec![2.5])).collect();
        let (fitted, history) = train(&net, &dataset, &quick_cfg(200)).unwrap();
        assert!(history.last().unwrap().train_mse < 1e-8);
        assert!((fitted.forward_scalar(&[0.4, -1.0]).unwrap() - 2.5).abs() < 1e-4);
    }

    #[test]
    fn linear_target_is_recovered_exactly() {
        // y = 2x + 1 is realizable with identity activations.
        let net = NeuralNet::glorot(&[1, 4, 1], Activation::Identity, 3);
        let dataset: Vec<_> = (0..101)
            .map(|k| {
                let x = -1.0 + 0.02 * k as f64;
                (vec![x], vec![2.0 * x + 1.0])
            })
            .collect();
        let mut cfg = quick_cfg(600);
        cfg.learning_rate = 2e-2;
        let (_, history) = train(&net, &dataset, &cfg).unwrap();
        assert!(
            history.last().unwrap().val_mse < 1e-10,
            "val mse {}",
            history.last().unwrap().val_mse
        );
    }

    #[test]
    fn fits_square_function_on_unit_interval() {
        // 1-16-1 tanh on y = x^2 over [-1, 1].
        let net = NeuralNet::glorot(&[1, 16, 1], Activation::Tanh, 5);
        let dataset: Vec<_> = (0..1000)
            .map(|k| {
                let x = -1.0 + 2.0 * k as f64 / 999.0;
                (vec![x], vec![x * x])
            })
            .collect();
        let mut cfg = quick_cfg(1500);
        cfg.learning_rate = 1e-2;
        cfg.batch_size = 128;
        let (fitted, _) = train(&net, &dataset, &cfg).unwrap();
        // Held-out grid deliberately off the training points.
        let mut worst = 0.0f64;
        let mut mse_sum = 0.0;
        let n = 337;
        for k in 0..n {
            let x = -0.999 + 1.998 * k as f64 / (n - 1) as f64;
            let e = fitted.forward_scalar(&[x]).unwrap() - x * x;
            mse_sum += e * e;
            worst = worst.max(e.abs());
        }
        let mse = mse_sum / n as f64;
        assert!(mse < 1e-3, "held-out mse {mse}, worst {worst}");
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let net = NeuralNet::glorot(&[2, 8, 1], Activation::Tanh, 9);
        let dataset: Vec<_> = (0..128)
            .map(|k| {
                let x = k as f64 / 127.0;
                (vec![x, 1.0 - x], vec![(3.0 * x).sin()])
            })
            .collect();
        let (a, ha) = train(&net, &dataset, &quick_cfg(50)).unwrap();
        let (b, hb) = train(&net, &dataset, &quick_cfg(50)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.len(), hb.len());
        for (ra, rb) in ha.iter().zip(hb.iter()) {
            assert_eq!(ra.train_mse.to_bits(), rb.train_mse.to_bits());
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        // Random small nets across all activations used in the crate.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (dims, act) in [
            (vec![3usize, 8, 1], Activation::Tanh),
            (vec![2, 5, 4, 1], Activation::Tanh),
            (vec![4, 6, 2], Activation::Relu),
            (vec![3, 3, 1], Activation::Identity),
        ] {
            let mut net = NeuralNet::glorot(&dims, act, rng.gen());
            // Non-trivial normalizations so their gradients are exercised too.
            net.input_norm.mean.iter_mut().for_each(|m| *m = rng.gen_range(-0.5..0.5));
            net.input_norm.scale.iter_mut().for_each(|s| *s = rng.gen_range(0.5..2.0));
            net.output_norm.mean.iter_mut().for_each(|m| *m = rng.gen_range(-0.5..0.5));
            net.output_norm.scale.iter_mut().for_each(|s| *s = rng.gen_range(0.5..2.0));
            let samples: Vec<_> = (0..8)
                .map(|_| {
                    let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let y: Vec<f64> = (0..*dims.last().unwrap())
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect();
                    (x, y)
                })
                .collect();
            let worst = gradient_check(&net, &samples, 1e-5);
            assert!(worst < 1e-5, "gradient mismatch {worst} for {dims:?} {act:?}");
        }
    }

    #[test]
    fn early_stopping_returns_best_snapshot() {
        let net = NeuralNet::glorot(&[1, 8, 1], Activation::Tanh, 2);
        let dataset: Vec<_> = (0..64)
            .map(|k| {
                let x = k as f64 / 63.0;
                (vec![x], vec![x.powi(3)])
            })
            .collect();
        let mut cfg = quick_cfg(400);
        cfg.early_stop_patience = 25;
        let (fitted, history) = train(&net, &dataset, &cfg).unwrap();
        let best = history
            .iter()
            .map(|r| r.val_mse)
            .fold(f64::INFINITY, f64::min);
        // Recompute validation loss of the returned snapshot: it must match
        // the best recorded value (same split, same seed).
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut indices: Vec<usize> = (0..dataset.len()).collect();
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        let n_val = ((dataset.len() as f64 * cfg.validation_fraction).round() as usize)
            .clamp(1, dataset.len() - 1);
        let val: Vec<_> = indices[..n_val].iter().map(|&k| dataset[k].clone()).collect();
        let got = mse(&fitted, &val);
        assert!((got - best).abs() <= 1e-12 * (1.0 + best));
    }
}
