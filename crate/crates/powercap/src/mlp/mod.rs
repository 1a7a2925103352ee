//! Minimal feedforward network stack: inference, Adam training on MSE, and
//! a versioned binary file format. Everything is f64 and deterministic
//! given a seed.

mod io;
mod train;

pub use io::{load, save};
pub use train::{gradient_check, train, LossRecord, TrainConfig};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation *output*. Valid for all
    /// three variants (for relu the output sign carries the needed
    /// information).
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer; weights are row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) biases: Vec<f64>,
    pub(crate) activation: Activation,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::DimensionMismatch {
                expected: in_dim * out_dim,
                got: weights.len(),
                context: "layer weights".into(),
            });
        }
        if biases.len() != out_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim,
                got: biases.len(),
                context: "layer biases".into(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.biases[o];
            for (w, x) in row.iter().zip(input.iter()) {
                z += w * x;
            }
            out[o] = self.activation.apply(z);
        }
    }

    /// Operator norm upper bound (Frobenius), used for the Lipschitz
    /// spot-check.
    pub fn frobenius_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Per-feature affine normalization: `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Zero-mean/unit-variance statistics from data rows. Features with
    /// (near-)zero variance keep scale 1 so normalization stays invertible.
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, n: usize) -> Self {
        let mut mean = vec![0.0; n];
        let mut count = 0usize;
        for row in rows.clone() {
            for (m, x) in mean.iter_mut().zip(row.iter()) {
                *m += x;
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(n);
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; n];
        for row in rows {
            for j in 0..n {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.scale.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: self.scale.len(),
                context: "normalization mean/scale".into(),
            });
        }
        if self.scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidParameter(
                "normalization scale factors must be finite and > 0".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.mean[j]) / self.scale[j];
        }
    }

    #[inline]
    fn denormalize(&self, j: usize, y: f64) -> f64 {
        y * self.scale[j] + self.mean[j]
    }
}

/// Reusable forward-pass buffers; allocate once per hot loop with
/// [`NeuralNet::scratch`].
#[derive(Debug, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// A feedforward net with affine input/output normalization baked in.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNet {
    pub(crate) layers: Vec<Layer>,
    pub(crate) input_norm: FeatureNorm,
    pub(crate) output_norm: FeatureNorm,
}

impl NeuralNet {
    pub fn from_layers(
        layers: Vec<Layer>,
        input_norm: FeatureNorm,
        output_norm: FeatureNorm,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("net needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                    context: "adjacent layer dims".into(),
                });
            }
        }
        let last = layers.last().unwrap();
        if last.activation != Activation::Identity {
            return Err(Error::InvalidParameter(
                "final layer activation must be identity".into(),
            ));
        }
        input_norm.validate()?;
        output_norm.validate()?;
        if input_norm.len() != layers[0].in_dim {
            return Err(Error::DimensionMismatch {
                expected: layers[0].in_dim,
                got: input_norm.len(),
                context: "input normalization width".into(),
            });
        }
        if output_norm.len() != last.out_dim {
            return Err(Error::DimensionMismatch {
                expected: last.out_dim,
                got: output_norm.len(),
                context: "output normalization width".into(),
            });
        }
        Ok(Self {
            layers,
            input_norm,
            output_norm,
        })
    }

    /// Glorot-style uniform initialization for the hidden stack; the final
    /// layer is identity-activated. Normalizations start as identity and
    /// are replaced by `train`.
    pub fn glorot(dims: &[usize], hidden: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            let act = if l + 2 == dims.len() {
                Activation::Identity
            } else {
                hidden
            };
            layers.push(Layer::new(fan_in, fan_out, weights, vec![0.0; fan_out], act).unwrap());
        }
        Self {
            input_norm: FeatureNorm::identity(dims[0]),
            output_norm: FeatureNorm::identity(*dims.last().unwrap()),
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn scratch(&self) -> Scratch {
        let max = self
            .layers
            .iter()
            .map(|l| l.in_dim.max(l.out_dim))
            .max()
            .unwrap_or(1);
        Scratch {
            a: vec![0.0; max],
            b: vec![0.0; max],
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
                context: "net input".into(),
            });
        }
        Ok(())
    }

    /// Forward pass into caller-provided buffers; returns the denormalized
    /// output slice. This is the allocation-free hot path.
    pub fn forward_with<'s>(&self, input: &[f64], s: &'s mut Scratch) -> Result<&'s [f64]> {
        self.check_input(input)?;
        self.input_norm.normalize_into(input, &mut s.a[..input.len()]);
        let mut cur_in_a = true;
        let mut width = input.len();
        for layer in &self.layers {
            let (src, dst) = if cur_in_a {
                (&s.a, &mut s.b)
            } else {
                (&s.b, &mut s.a)
            };
            layer.forward_into(&src[..width], &mut dst[..layer.out_dim]);
            width = layer.out_dim;
            cur_in_a = !cur_in_a;
        }
        let out = if cur_in_a {
            &mut s.a[..width]
        } else {
            &mut s.b[..width]
        };
        for (j, y) in out.iter_mut().enumerate() {
            *y = self.output_norm.denormalize(j, *y);
        }
        Ok(&*out)
    }

    /// Convenience forward pass returning a fresh vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.scratch();
        Ok(self.forward_with(input, &mut s)?.to_vec())
    }

    /// Forward pass for single-output nets.
    pub fn forward_scalar(&self, input: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.output_dim(),
                context: "scalar output".into(),
            });
        }
        let mut s = self.scratch();
        Ok(self.forward_with(input, &mut s)?[0])
    }

    /// Upper bound on the net's Lipschitz constant in the normalized space:
    /// product of layer Frobenius norms (all activation slopes are <= 1).
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers.iter().map(|l| l.frobenius_norm()).product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_through() {
        let n = 3;
        let mut w = vec![0.0; n * n];
        for j in 0..n {
            w[j * n + j] = 1.0;
        }
        let net = NeuralNet::from_layers(
            vec![Layer::new(n, n, w, vec![0.0; n], Activation::Identity).unwrap()],
            FeatureNorm::identity(n),
            FeatureNorm::identity(n),
        )
        .unwrap();
        let x = [0.3, -1.2, 7.5];
        let y = net.forward(&x).unwrap();
        assert_eq!(&y[..], &x[..]);
    }

    #[test]
    fn zero_weights_yield_constant_bias() {
        let net = NeuralNet::from_layers(
            vec![Layer::new(2, 1, vec![0.0, 0.0], vec![1.25], Activation::Identity).unwrap()],
            FeatureNorm::identity(2),
            FeatureNorm {
                mean: vec![10.0],
                scale: vec![2.0],
            },
        )
        .unwrap();
        // output = bias * scale + mean
        for x in [[0.0, 0.0], [5.0, -3.0]] {
            assert_eq!(net.forward_scalar(&x).unwrap(), 1.25 * 2.0 + 10.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = NeuralNet::glorot(&[4, 8, 1], Activation::Tanh, 1);
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn glorot_is_seeded() {
        let a = NeuralNet::glorot(&[3, 16, 1], Activation::Tanh, 99);
        let b = NeuralNet::glorot(&[3, 16, 1], Activation::Tanh, 99);
        assert_eq!(a, b);
        let c = NeuralNet::glorot(&[3, 16, 1], Activation::Tanh, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn lipschitz_bound_holds_on_random_pairs() {
        let net = NeuralNet::glorot(&[3, 16, 16, 1], Activation::Tanh, 7);
        let bound = net.lipschitz_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let fx = net.forward_scalar(&x).unwrap();
            let fy = net.forward_scalar(&y).unwrap();
            let dist: f64 = x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!((fx - fy).abs() <= bound * dist * (1.0 + 1e-12));
        }
    }
}
