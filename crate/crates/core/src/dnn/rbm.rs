use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{sigmoid, DnnModel, TrainConfig};
use crate::{Error, Result};

/// Bernoulli-Bernoulli restricted Boltzmann machine.
#[derive(Debug, Clone, PartialEq)]
pub struct Rbm {
    /// `n_hidden x n_visible`
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

fn add_column(mut m: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    m += &b.view().insert_axis(Axis(1));
    m.mapv_inplace(sigmoid);
    m
}

impl Rbm {
    pub fn random(n_visible: usize, n_hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        Rbm {
            weights: Array2::from_shape_simple_fn((n_hidden, n_visible), || normal.sample(rng)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    pub fn hidden_probs(&self, v: ArrayView2<f64>) -> Array2<f64> {
        add_column(self.weights.dot(&v), &self.hidden_bias)
    }

    pub fn visible_probs(&self, h: ArrayView2<f64>) -> Array2<f64> {
        add_column(self.weights.t().dot(&h), &self.visible_bias)
    }

    /// Mean squared error of the deterministic up-down pass.
    pub fn reconstruction_error(&self, v: ArrayView2<f64>) -> f64 {
        let recon = self.visible_probs(self.hidden_probs(v).view());
        let diff = &recon - &v;
        diff.iter().map(|d| d * d).sum::<f64>() / v.len().max(1) as f64
    }

    /// CD-1 with momentum on column-sample data. Returns the machine and the
    /// reconstruction error after every epoch.
    pub fn train(
        data: ArrayView2<f64>,
        n_hidden: usize,
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Rbm, Vec<f64>)> {
        if data.ncols() == 0 {
            return Err(Error::InvalidInput("no training samples".into()));
        }
        let mut rbm = Rbm::random(data.nrows(), n_hidden, rng);
        let mut vel_w = Array2::zeros(rbm.weights.dim());
        let mut vel_v = Array1::zeros(rbm.visible_bias.len());
        let mut vel_h = Array1::zeros(n_hidden);
        let mut order: Vec<usize> = (0..data.ncols()).collect();
        let mut errors = Vec::with_capacity(cfg.rbm_epochs);

        for _ in 0..cfg.rbm_epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size) {
                let v0 = data.select(Axis(1), chunk);
                let n = chunk.len() as f64;
                let h0 = rbm.hidden_probs(v0.view());
                let h0_sample = h0.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
                let v1 = rbm.visible_probs(h0_sample.view());
                let h1 = rbm.hidden_probs(v1.view());

                let grad_w = (h0.dot(&v0.t()) - h1.dot(&v1.t())) / n;
                let grad_v = (&v0 - &v1).sum_axis(Axis(1)) / n;
                let grad_h = (&h0 - &h1).sum_axis(Axis(1)) / n;

                vel_w = vel_w * cfg.momentum + grad_w * cfg.learning_rate;
                vel_v = vel_v * cfg.momentum + grad_v * cfg.learning_rate;
                vel_h = vel_h * cfg.momentum + grad_h * cfg.learning_rate;
                rbm.weights += &vel_w;
                rbm.visible_bias += &vel_v;
                rbm.hidden_bias += &vel_h;
            }
            errors.push(rbm.reconstruction_error(data));
        }
        Ok((rbm, errors))
    }
}

#[derive(Debug, Clone)]
pub struct RbmStack {
    /// Network with RBM-initialized hidden layers and a small random output layer.
    pub model: DnnModel,
    /// Per-layer reconstruction error after each epoch.
    pub errors: Vec<Vec<f64>>,
}

/// Greedy layerwise pretraining. Layer `k` trains on the hidden
/// probabilities of layer `k - 1`; inputs are clipped to `[0, 1]`.
///
/// `layer_sizes` is `[n_0, ..., n_K]` with `n_K = 2`; the output layer is
/// not pretrained and starts uniform in `[-0.01, 0.01]`.
pub fn pretrain_rbm_stack(
    data: ArrayView2<f64>,
    layer_sizes: &[usize],
    context_frames: usize,
    cfg: &TrainConfig,
) -> Result<RbmStack> {
    cfg.validate()?;
    if data.ncols() == 0 {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if layer_sizes.len() < 3 || layer_sizes[0] != data.nrows() || *layer_sizes.last().unwrap() != 2
    {
        return Err(Error::Config(format!(
            "layer sizes {layer_sizes:?} must start at the input size {} and end at 2 with a hidden layer in between",
            data.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DnnModel::zeros(layer_sizes, context_frames)?;
    let mut input = data.mapv(|x| x.clamp(0.0, 1.0));
    let mut errors = Vec::new();
    let n_hidden_layers = layer_sizes.len() - 2;
    for k in 0..n_hidden_layers {
        let (rbm, trace) = Rbm::train(input.view(), layer_sizes[k + 1], cfg, &mut rng)?;
        input = rbm.hidden_probs(input.view());
        model.weights[k] = rbm.weights;
        model.biases[k] = rbm.hidden_bias;
        errors.push(trace);
    }
    let out = model.weights.last_mut().unwrap();
    out.mapv_inplace(|_| rng.random_range(-0.01..=0.01));
    let out_b = model.biases.last_mut().unwrap();
    out_b.mapv_inplace(|_| rng.random_range(-0.01..=0.01));
    Ok(RbmStack { model, errors })
}
