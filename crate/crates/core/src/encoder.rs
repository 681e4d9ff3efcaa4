//! Fully connected encoder: SELU hidden layers with inverted dropout and a
//! sigmoid output mapped into parameter bounds.
//!
//! Weights live in one flat vector. Layer `k` stores its `n_out x n_in`
//! weight matrix row-major followed by its `n_out` biases.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

fn selu_prime(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Logistic function kept strictly inside (0, 1) even where it saturates.
fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// Admissible box for each learned parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Bounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let b = Self { low, high };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.low.len() != self.high.len() {
            return Err(Error::ConfigInvalid("bounds have different lengths".into()));
        }
        for (l, h) in self.low.iter().zip(&self.high) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::ConfigInvalid(format!("invalid bound pair ({l}, {h})")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    /// `low + s (high - low)`.
    pub fn scale(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(self.low.iter().zip(&self.high)).map(|(s, (l, h))| l + s * (h - l)).collect()
    }

    /// Sigmoid pre-activation producing `theta` (clamped just inside the box).
    pub fn logit(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(t, (l, h))| {
                let s = ((t - l) / (h - l)).clamp(1e-9, 1.0 - 1e-9);
                (s / (1.0 - s)).ln()
            })
            .collect()
    }

    pub fn contains_strictly(&self, theta: &[f64]) -> bool {
        theta.len() == self.len() && theta.iter().zip(self.low.iter().zip(&self.high)).all(|(t, (l, h))| l < t && t < h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    layer_sizes: Vec<usize>,
    weights: Vec<f64>,
    pub dropout: f64,
    pub bounds: Bounds,
    #[serde(skip, default = "fresh_version")]
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.weights == other.weights
            && self.dropout == other.dropout
            && self.bounds == other.bounds
    }
}

/// Intermediate values of one forward pass, needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Inputs to each layer (the last entry feeds the output layer).
    inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout factors per hidden unit (all ones in Eval mode).
    masks: Vec<Vec<f64>>,
    /// Sigmoid outputs.
    pub s: Vec<f64>,
}

pub fn parameter_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Network {
    /// LeCun-normal weights (`std = 1/sqrt(fan_in)`), zero biases.
    pub fn init_weights(layer_sizes: &[usize], dropout: f64, bounds: Bounds, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes[..layer_sizes.len() - 1].contains(&0) {
            return Err(Error::ConfigInvalid(format!("invalid layer sizes {layer_sizes:?}")));
        }
        if *layer_sizes.last().unwrap() != bounds.len() {
            return Err(Error::DimensionMismatch { expected: bounds.len(), got: *layer_sizes.last().unwrap() });
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::ConfigInvalid(format!("dropout rate {dropout} outside [0, 1)")));
        }
        bounds.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(parameter_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let normal = Normal::new(0.0, 1.0 / (w[0] as f64).sqrt()).expect("positive std");
            weights.extend((0..w[0] * w[1]).map(|_| normal.sample(&mut rng)));
            weights.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, dropout, bounds, version: fresh_version() })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    pub fn set_weights(&mut self, w: Vec<f64>) -> Result<()> {
        if w.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: w.len() });
        }
        self.weights = w;
        self.version = fresh_version();
        Ok(())
    }

    pub fn set_weight(&mut self, i: usize, value: f64) {
        self.weights[i] = value;
        self.version = fresh_version();
    }

    /// Mutable access to the flat weights; invalidates outstanding caches.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.weights
    }

    /// Offset of layer `k`'s biases in the flat weight vector.
    pub fn bias_offset(&self, k: usize) -> usize {
        let mut off = 0;
        for (i, w) in self.layer_sizes.windows(2).enumerate() {
            if i == k {
                return off + w[0] * w[1];
            }
            off += (w[0] + 1) * w[1];
        }
        panic!("layer {k} out of range")
    }

    /// Validates structural invariants after deserialization.
    pub fn check(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::ConfigInvalid("network needs at least two layers".into()));
        }
        let n = parameter_count(&self.layer_sizes);
        if n != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: n, got: self.weights.len() });
        }
        if self.output_dim() != self.bounds.len() {
            return Err(Error::DimensionMismatch { expected: self.bounds.len(), got: self.output_dim() });
        }
        self.bounds.validate()
    }

    fn dense(&self, off: usize, n_in: usize, n_out: usize, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let (w, b) = self.weights[off..off + (n_in + 1) * n_out].split_at(n_in * n_out);
        for (row, bias) in w.chunks_exact(n_in).zip(b) {
            out.push(bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }

    /// Forward pass returning `theta` and the cache for backpropagation.
    pub fn forward<R: Rng + ?Sized>(&self, phi: &[f64], mode: Mode, rng: &mut R) -> Result<(Vec<f64>, ForwardCache)> {
        if phi.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: phi.len() });
        }
        let layers = self.layer_sizes.len() - 1;
        let keep = 1.0 - self.dropout;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut masks = Vec::with_capacity(layers - 1);
        let mut x = phi.to_vec();
        let mut off = 0;
        for k in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            let mut z = Vec::with_capacity(n_out);
            self.dense(off, n_in, n_out, &x, &mut z);
            off += (n_in + 1) * n_out;
            inputs.push(std::mem::take(&mut x));
            if k + 1 == layers {
                let s: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
                let theta = self.bounds.scale(&s);
                return Ok((theta, ForwardCache { version: self.version, inputs, pre, masks, s }));
            }
            let mask: Vec<f64> = match mode {
                Mode::Eval => vec![1.0; n_out],
                Mode::Train => (0..n_out).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect(),
            };
            x = z.iter().zip(&mask).map(|(v, m)| selu(*v) * m).collect();
            pre.push(z);
            masks.push(mask);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Eval-mode forward pass without a cache.
    pub fn predict(&self, phi: &[f64]) -> Result<Vec<f64>> {
        if phi.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: phi.len() });
        }
        let layers = self.layer_sizes.len() - 1;
        let mut x = phi.to_vec();
        let mut z = Vec::new();
        let mut off = 0;
        for k in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            self.dense(off, n_in, n_out, &x, &mut z);
            off += (n_in + 1) * n_out;
            if k + 1 < layers {
                x.clear();
                x.extend(z.iter().map(|v| selu(*v)));
            }
        }
        let s: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
        Ok(self.bounds.scale(&s))
    }

    /// Accumulates `(d theta / d w)^T dl_dtheta` into `grad`.
    pub fn backward_into(&self, cache: &ForwardCache, dl_dtheta: &[f64], grad: &mut [f64]) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if dl_dtheta.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: dl_dtheta.len() });
        }
        if grad.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: grad.len() });
        }
        let layers = self.layer_sizes.len() - 1;
        // d L / d z at the output
        let mut delta: Vec<f64> = dl_dtheta
            .iter()
            .zip(&cache.s)
            .zip(self.bounds.low.iter().zip(&self.bounds.high))
            .map(|((g, s), (l, h))| g * (h - l) * s * (1.0 - s))
            .collect();
        let mut off = self.weights.len();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            off -= (n_in + 1) * n_out;
            let x = &cache.inputs[k];
            let (gw, gb) = grad[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if k == 0 {
                break;
            }
            let w = &self.weights[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            for (i, p) in prev.iter_mut().enumerate() {
                *p *= cache.masks[k - 1][i] * selu_prime(cache.pre[k - 1][i]);
            }
            delta = prev;
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, dl_dtheta: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.weights.len()];
        self.backward_into(cache, dl_dtheta, &mut g)?;
        Ok(g)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, net: &mut Network, grad: &[f64]) -> Result<()> {
        if grad.len() != net.num_weights() || self.m.len() != grad.len() {
            return Err(Error::DimensionMismatch { expected: net.num_weights(), got: grad.len() });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let w = net.weights_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            w[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}
