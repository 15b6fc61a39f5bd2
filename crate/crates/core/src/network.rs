//! Feed-forward regressor: `hidden_layers` x (affine → ReLU → dropout),
//! then affine → sigmoid to a single life-fraction output.
//!
//! Gradients are computed by explicit reverse-mode passes over a cached
//! forward pass and applied with ADAM.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::MinMaxScaler;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Largest double below one; keeps sigmoid outputs inside the open interval.
const OUTPUT_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub units_per_layer: usize,
    pub dropout_prob: f64,
}

impl NetworkArchitecture {
    pub fn new(input_dim: usize, hidden_layers: usize, units_per_layer: usize, dropout_prob: f64) -> Result<Self> {
        let arch = Self { input_dim, hidden_layers, units_per_layer, dropout_prob };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.units_per_layer == 0 {
            return Err(Error::InvalidParameter(format!("degenerate architecture {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidParameter(format!(
                "dropout probability must lie in [0, 1), got {}",
                self.dropout_prob
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.input_dim, self.units_per_layer)];
        shapes.extend((1..self.hidden_layers).map(|_| (self.units_per_layer, self.units_per_layer)));
        shapes.push((self.units_per_layer, 1));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Weights are stored `fan_in x fan_out` so a batch multiplies on the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weights: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }
}

/// Parameter gradients, same shapes as the network's layers.
pub type Gradients = Vec<Dense>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub first: Vec<Dense>,
    pub second: Vec<Dense>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub architecture: NetworkArchitecture,
    pub layers: Vec<Dense>,
    pub adam: AdamMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each affine layer (post-dropout for hidden outputs).
    inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pre_activations: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers per hidden layer, absent in eval mode.
    masks: Vec<Option<Array2<f64>>>,
    pub predictions: Array1<f64>,
    step: u64,
}

impl NetworkState {
    /// He-initialised weights, zero biases, fresh ADAM moments.
    pub fn init(architecture: NetworkArchitecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Dense> = architecture
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(&mut rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        let zeros = zeros_like(&layers);
        Ok(Self { architecture, layers, adam: AdamMoments { first: zeros.clone(), second: zeros, step: 0 } })
    }

    pub fn forward<R: Rng + ?Sized>(&self, batch: ArrayView2<f64>, mode: Mode, rng: &mut R) -> Result<ForwardCache> {
        if batch.ncols() != self.architecture.input_dim {
            return Err(Error::DimensionMismatch { expected: self.architecture.input_dim, actual: batch.ncols() });
        }
        let p = self.architecture.dropout_prob;
        let keep_scale = 1.0 / (1.0 - p);
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);
        let mut a = batch.to_owned();
        for layer in &self.layers[..hidden] {
            let z = a.dot(&layer.weights) + &layer.bias;
            let mut next = z.mapv(|v| v.max(0.0));
            let mask = if mode == Mode::Train && p > 0.0 {
                let m = Array2::from_shape_simple_fn(next.raw_dim(), || {
                    if rng.random::<f64>() >= p { keep_scale } else { 0.0 }
                });
                next *= &m;
                Some(m)
            } else {
                None
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre_activations.push(z);
            masks.push(mask);
        }
        let out = &self.layers[hidden];
        let z = a.dot(&out.weights).column(0).mapv(|v| v + out.bias[0]);
        inputs.push(a);
        let predictions = z.mapv(|v| sigmoid(v).clamp(f64::MIN_POSITIVE, OUTPUT_CEIL));
        Ok(ForwardCache { inputs, pre_activations, masks, predictions, step: self.adam.step })
    }

    /// Eval-mode predictions.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(batch, Mode::Eval, &mut unused)?.predictions)
    }

    /// Parameter gradients given `dL/dy_hat` for every row of the cached batch.
    pub fn backward(&self, cache: &ForwardCache, loss_gradient: &[f64]) -> Result<Gradients> {
        if cache.step != self.adam.step || cache.inputs.len() != self.layers.len() {
            return Err(Error::InvalidParameter("forward cache is stale for this network state".into()));
        }
        let n = cache.predictions.len();
        if loss_gradient.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: loss_gradient.len() });
        }
        let hidden = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());

        let dz_out: Array1<f64> = cache
            .predictions
            .iter()
            .zip(loss_gradient)
            .map(|(&y, &g)| g * y * (1.0 - y))
            .collect();
        let dz = dz_out.insert_axis(Axis(1));
        grads.push(Dense {
            weights: cache.inputs[hidden].t().dot(&dz),
            bias: dz.sum_axis(Axis(0)),
        });
        let mut da = dz.dot(&self.layers[hidden].weights.t());

        for l in (0..hidden).rev() {
            if let Some(mask) = &cache.masks[l] {
                da *= mask;
            }
            Zip::from(&mut da).and(&cache.pre_activations[l]).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            grads.push(Dense { weights: cache.inputs[l].t().dot(&da), bias: da.sum_axis(Axis(0)) });
            if l > 0 {
                da = da.dot(&self.layers[l].weights.t());
            }
        }
        grads.reverse();
        Ok(grads)
    }

    /// One bias-corrected ADAM update.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {lr}")));
        }
        if grads.len() != self.layers.len() {
            return Err(Error::DimensionMismatch { expected: self.layers.len(), actual: grads.len() });
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *theta -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
        };
        for (((layer, g), m), v) in
            self.layers.iter_mut().zip(grads).zip(&mut self.adam.first).zip(&mut self.adam.second)
        {
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|theta, &g, m, v| update(theta, g, m, v));
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|theta, &g, m, v| update(theta, g, m, v));
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

pub fn zeros_like(layers: &[Dense]) -> Vec<Dense> {
    layers.iter().map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols())).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Everything needed to reload a trained model and reproduce its predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: NetworkArchitecture,
    pub layers: Vec<Dense>,
    pub loss: String,
    pub lambda: f64,
    pub beta: f64,
    pub eta: f64,
    pub scaler: MinMaxScaler,
    pub seed: u64,
    #[serde(default)]
    pub manifest_hash: String,
}

impl Checkpoint {
    pub fn network(&self) -> Result<NetworkState> {
        self.architecture.validate()?;
        let shapes = self.architecture.layer_shapes();
        if shapes.len() != self.layers.len()
            || shapes.iter().zip(&self.layers).any(|(&(i, o), l)| l.weights.dim() != (i, o) || l.bias.len() != o)
        {
            return Err(Error::Config("checkpoint layers do not match its architecture".into()));
        }
        let zeros = zeros_like(&self.layers);
        Ok(NetworkState {
            architecture: self.architecture,
            layers: self.layers.clone(),
            adam: AdamMoments { first: zeros.clone(), second: zeros, step: 0 },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
