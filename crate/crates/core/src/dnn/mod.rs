//! The joint two-output sigmoid classifier.
//!
//! Every layer computes `h_k = g(W_k h_{k-1} + b_k)` with the logistic `g`,
//! including the output layer, whose two units score source one and source
//! two. Besides evaluation the model exposes the analytic Jacobian of both
//! outputs with respect to the input, which the separation stage needs to
//! pull spectral estimates towards their class.

mod rbm;
mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::{Error, Result};

pub use rbm::{pretrain_rbm_stack, Rbm, RbmStack};
pub use train::{loss_and_gradient, train_supervised, Gradients, Training};

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rbm_epochs: usize,
    pub bp_epochs: usize,
    /// Leading backprop epochs that touch only the output layer.
    pub output_only_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rbm_epochs: 150,
            bp_epochs: 500,
            output_only_epochs: 5,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_only_epochs > self.bp_epochs {
            return Err(Error::Config(format!(
                "output_only_epochs ({}) exceeds bp_epochs ({})",
                self.output_only_epochs, self.bp_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Layer `k` maps `n_{k-1}` inputs to `n_k` units; the last layer has two.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnModel {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Number of stacked spectral frames per input vector.
    pub context_frames: usize,
}

impl DnnModel {
    pub fn new(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        context_frames: usize,
    ) -> Result<Self> {
        let model = DnnModel {
            weights,
            biases,
            context_frames,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(shape_err(format!(
                "{} weight matrices and {} bias vectors",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.nrows() != b.len() {
                return Err(shape_err(format!(
                    "layer {k}: {:?} weights, {} biases",
                    w.dim(),
                    b.len()
                )));
            }
            if k > 0 && w.ncols() != self.weights[k - 1].nrows() {
                return Err(shape_err(format!(
                    "layer {k} does not chain onto layer {}",
                    k - 1
                )));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "layer {k} has non-finite parameters"
                )));
            }
        }
        if self.weights.last().map(|w| w.nrows()) != Some(2) {
            return Err(shape_err("the output layer must have two units"));
        }
        if self.context_frames == 0 || self.context_frames % 2 == 0 {
            return Err(Error::Config("context_frames must be odd".into()));
        }
        if self.input_dim() % self.context_frames != 0 {
            return Err(shape_err("input size is not a multiple of context_frames"));
        }
        Ok(())
    }

    /// All-zero parameters for the given `[n_0, ..., n_K]`.
    pub fn zeros(layer_sizes: &[usize], context_frames: usize) -> Result<Self> {
        let (weights, biases) = layer_sizes
            .windows(2)
            .map(|p| (Array2::zeros((p[1], p[0])), Array1::zeros(p[1])))
            .unzip();
        DnnModel::new(weights, biases, context_frames)
    }

    /// Parameters uniform in `[-scale, scale]`.
    pub fn random(layer_sizes: &[usize], scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = DnnModel::zeros(layer_sizes, 1)?;
        for (w, b) in model.weights.iter_mut().zip(model.biases.iter_mut()) {
            w.mapv_inplace(|_| rng.random_range(-scale..=scale));
            b.mapv_inplace(|_| rng.random_range(-scale..=scale));
        }
        Ok(model)
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    /// `[n_0, n_1, ..., n_K]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.weights.iter().map(|w| w.nrows()))
            .collect()
    }

    /// Frequency bins per stacked frame.
    pub fn frame_dim(&self) -> usize {
        self.input_dim() / self.context_frames
    }

    /// Output scores for a batch of column inputs, `2 x N`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(forward_batch(self, x)?.pop().expect("at least one layer"))
    }
}

/// Cached layer activations `[h_0 = x, h_1, ..., h_K = f(x)]`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub activations: Vec<Array1<f64>>,
}

impl Forward {
    /// `(f_1(x), f_2(x))`.
    pub fn output(&self) -> [f64; 2] {
        let f = self.activations.last().expect("non-empty");
        [f[0], f[1]]
    }
}

pub fn forward(model: &DnnModel, x: ArrayView1<f64>) -> Result<Forward> {
    if x.len() != model.input_dim() {
        return Err(shape_err(format!(
            "input has {} entries, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let mut activations = Vec::with_capacity(model.n_layers() + 1);
    activations.push(x.to_owned());
    for (w, b) in model.weights.iter().zip(&model.biases) {
        let mut z = w.dot(activations.last().unwrap());
        z += b;
        z.mapv_inplace(sigmoid);
        activations.push(z);
    }
    Ok(Forward { activations })
}

/// Activations for a batch of column inputs; element `k` is `n_k x N`.
pub fn forward_batch(model: &DnnModel, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
    if x.nrows() != model.input_dim() {
        return Err(shape_err(format!(
            "inputs have {} rows, model expects {}",
            x.nrows(),
            model.input_dim()
        )));
    }
    let mut acts = Vec::with_capacity(model.n_layers() + 1);
    acts.push(x.to_owned());
    for (w, b) in model.weights.iter().zip(&model.biases) {
        let mut z = w.dot(acts.last().unwrap());
        z += &b.view().insert_axis(Axis(1));
        z.mapv_inplace(sigmoid);
        acts.push(z);
    }
    Ok(acts)
}

/// Jacobian of the two outputs with respect to the input, `2 x d`.
///
/// Backpropagates `q_K,i = f_i (1 - f_i) e_i` through the layers:
/// `q_{k-1} = W_k' q_k`, multiplied by `h (1 - h)` of the activation that fed
/// `W_k` whenever that activation is itself a hidden layer.
pub fn input_gradient(model: &DnnModel, fwd: &Forward) -> Result<Array2<f64>> {
    let acts = &fwd.activations;
    if acts.len() != model.n_layers() + 1
        || acts
            .iter()
            .zip(model.layer_sizes())
            .any(|(h, n)| h.len() != n)
    {
        return Err(shape_err("activations do not belong to this model"));
    }
    let [f1, f2] = fwd.output();
    let mut q = Array2::zeros((2, 2));
    q[[0, 0]] = f1 * (1.0 - f1);
    q[[1, 1]] = f2 * (1.0 - f2);
    for k in (0..model.n_layers()).rev() {
        let mut next = q.dot(&model.weights[k]);
        if k == 0 {
            return Ok(next);
        }
        let d = acts[k].mapv(|h| h * (1.0 - h));
        next *= &d.view().insert_axis(Axis(0));
        q = next;
    }
    unreachable!("model has at least one layer")
}

/// Fraction of columns whose larger score matches the one-hot label.
pub fn accuracy(model: &DnnModel, x: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<f64> {
    let scores = model.predict(x)?;
    if labels.dim() != scores.dim() {
        return Err(shape_err("labels do not match the number of inputs"));
    }
    let hits = scores
        .axis_iter(Axis(1))
        .zip(labels.axis_iter(Axis(1)))
        .filter(|(s, l)| (s[0] > s[1]) == (l[0] > l[1]))
        .count();
    Ok(hits as f64 / x.ncols().max(1) as f64)
}
