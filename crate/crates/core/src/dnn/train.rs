use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward_batch, DnnModel, TrainConfig};
use crate::error::shape_err;
use crate::{Error, Result};

/// Parameter gradients, shaped like the model's weights and biases.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct Training {
    pub model: DnnModel,
    /// Mean per-sample squared error over each epoch.
    pub loss: Vec<f64>,
}

fn check_labels(x: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<()> {
    if labels.nrows() != 2 || labels.ncols() != x.ncols() {
        return Err(shape_err(format!(
            "labels {:?} for {} samples",
            labels.dim(),
            x.ncols()
        )));
    }
    for col in labels.axis_iter(Axis(1)) {
        let one_hot = (col[0] == 1.0 && col[1] == 0.0) || (col[0] == 0.0 && col[1] == 1.0);
        if !one_hot {
            return Err(Error::InvalidInput(format!(
                "label ({}, {}) is not a source indicator",
                col[0], col[1]
            )));
        }
    }
    Ok(())
}

/// Summed squared error `sum ||f(x) - label||^2` and its gradient with
/// respect to the layers from `first_layer` upwards (lower layers get zero).
fn batch_gradient(
    model: &DnnModel,
    x: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    first_layer: usize,
) -> Result<(f64, Gradients)> {
    let acts = forward_batch(model, x)?;
    let out = acts.last().unwrap();
    let diff = out - &labels;
    let loss = diff.iter().map(|d| d * d).sum();

    let k_total = model.n_layers();
    let mut grads = Gradients {
        weights: model
            .weights
            .iter()
            .map(|w| Array2::zeros(w.dim()))
            .collect(),
        biases: model
            .biases
            .iter()
            .map(|b| Array1::zeros(b.len()))
            .collect(),
    };
    // delta of the pre-activation at the current layer
    let mut delta = diff * 2.0 * &out.mapv(|f| f * (1.0 - f));
    for k in (first_layer..k_total).rev() {
        grads.weights[k] = delta.dot(&acts[k].t());
        grads.biases[k] = delta.sum_axis(Axis(1));
        if k > first_layer {
            let back = model.weights[k].t().dot(&delta);
            delta = back * &acts[k].mapv(|h| h * (1.0 - h));
        }
    }
    Ok((loss, grads))
}

/// Least-squares loss over column samples and its full parameter gradient.
pub fn loss_and_gradient(
    model: &DnnModel,
    x: ArrayView2<f64>,
    labels: ArrayView2<f64>,
) -> Result<(f64, Gradients)> {
    check_labels(x, labels)?;
    batch_gradient(model, x, labels, 0)
}

/// Minibatch gradient descent with momentum on `sum ||f(x) - label||^2`.
///
/// The first `output_only_epochs` epochs leave every layer but the output
/// layer untouched. Batch order is drawn from `cfg.seed`.
pub fn train_supervised(
    init: DnnModel,
    x: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<Training> {
    cfg.validate()?;
    check_labels(x, labels)?;
    if x.nrows() != init.input_dim() {
        return Err(shape_err(format!(
            "inputs have {} rows, model expects {}",
            x.nrows(),
            init.input_dim()
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    let mut model = init;
    let mut vel_w: Vec<Array2<f64>> = model
        .weights
        .iter()
        .map(|w| Array2::zeros(w.dim()))
        .collect();
    let mut vel_b: Vec<Array1<f64>> = model
        .biases
        .iter()
        .map(|b| Array1::zeros(b.len()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..x.ncols()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.bp_epochs);
    let top = model.n_layers() - 1;

    for epoch in 0..cfg.bp_epochs {
        let first_layer = if epoch < cfg.output_only_epochs {
            top
        } else {
            0
        };
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(1), chunk);
            let lb = labels.select(Axis(1), chunk);
            let (loss, grads) = batch_gradient(&model, xb.view(), lb.view(), first_layer)?;
            epoch_loss += loss;
            let step = cfg.learning_rate / chunk.len() as f64;
            for k in first_layer..=top {
                vel_w[k] *= cfg.momentum;
                vel_w[k].scaled_add(-step, &grads.weights[k]);
                vel_b[k] *= cfg.momentum;
                vel_b[k].scaled_add(-step, &grads.biases[k]);
                model.weights[k] += &vel_w[k];
                model.biases[k] += &vel_b[k];
            }
        }
        loss_trace.push(epoch_loss / x.ncols() as f64);
    }
    model.validate()?;
    Ok(Training {
        model,
        loss: loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::accuracy;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((4, n));
        let mut l = Array2::zeros((2, n));
        for j in 0..n {
            let class = j % 2;
            for i in 0..4 {
                x[[i, j]] = rng.random_range(0.0..1.0);
            }
            // w . x > 2.2 for class 0, < 1.8 for class 1
            let s: f64 = x[[0, j]] + x[[1, j]] - x[[2, j]] + x[[3, j]];
            let shift = if class == 0 {
                2.2 - s.min(2.2)
            } else {
                (1.8 - s).min(0.0)
            };
            x[[0, j]] += shift / 2.0;
            x[[1, j]] += shift / 2.0;
            l[[class, j]] = 1.0;
        }
        (x, l)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            bp_epochs: 300,
            output_only_epochs: 5,
            batch_size: 16,
            learning_rate: 0.5,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_linearly_separable_classes() {
        let (x, l) = separable(400, 1);
        let init = DnnModel::random(&[4, 6, 2], 0.5, 2).unwrap();
        let out = train_supervised(init, x.view(), l.view(), &cfg()).unwrap();
        let (xt, lt) = separable(200, 9);
        let acc = accuracy(&out.model, xt.view(), lt.view()).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
        assert!(out.loss.last().unwrap() < &out.loss[0]);
    }

    #[test]
    fn lower_layers_frozen_during_output_only_epochs() {
        let (x, l) = separable(64, 4);
        let init = DnnModel::random(&[4, 5, 3, 2], 0.5, 5).unwrap();
        let c = TrainConfig {
            bp_epochs: 5,
            output_only_epochs: 5,
            ..cfg()
        };
        let out = train_supervised(init.clone(), x.view(), l.view(), &c).unwrap();
        assert_eq!(out.model.weights[0], init.weights[0]);
        assert_eq!(out.model.weights[1], init.weights[1]);
        assert_eq!(out.model.biases[..2], init.biases[..2]);
        assert_ne!(out.model.weights[2], init.weights[2]);

        let c = TrainConfig { bp_epochs: 6, ..c };
        let out = train_supervised(init.clone(), x.view(), l.view(), &c).unwrap();
        assert_ne!(out.model.weights[0], init.weights[0]);
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, l) = separable(100, 6);
        let init = DnnModel::random(&[4, 5, 2], 0.5, 7).unwrap();
        let c = TrainConfig {
            bp_epochs: 20,
            ..cfg()
        };
        let a = train_supervised(init.clone(), x.view(), l.view(), &c).unwrap();
        let b = train_supervised(init, x.view(), l.view(), &c).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn rejects_non_indicator_labels() {
        let init = DnnModel::random(&[4, 5, 2], 0.5, 7).unwrap();
        let x = Array2::zeros((4, 2));
        let bad = array![[1.0, 0.5], [0.0, 0.5]];
        assert!(train_supervised(init.clone(), x.view(), bad.view(), &cfg()).is_err());
        let both = array![[1.0, 1.0], [0.0, 1.0]];
        assert!(loss_and_gradient(&init, x.view(), both.view()).is_err());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let model = DnnModel::random(&[3, 4, 2], 1.0, 8).unwrap();
        let x = array![[0.1, 0.7, 0.4], [0.9, 0.2, 0.5], [0.3, 0.6, 0.8]];
        let l = array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let (_, grads) = loss_and_gradient(&model, x.view(), l.view()).unwrap();
        let h = 1e-5;
        let loss = |m: &DnnModel| loss_and_gradient(m, x.view(), l.view()).unwrap().0;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for k in 0..model.n_layers() {
            for idx in 0..model.weights[k].len() {
                let (r, c) = (
                    idx / model.weights[k].ncols(),
                    idx % model.weights[k].ncols(),
                );
                let mut p = model.clone();
                let mut m = model.clone();
                p.weights[k][[r, c]] += h;
                m.weights[k][[r, c]] -= h;
                numeric.push((loss(&p) - loss(&m)) / (2.0 * h));
                analytic.push(grads.weights[k][[r, c]]);
            }
            for i in 0..model.biases[k].len() {
                let mut p = model.clone();
                let mut m = model.clone();
                p.biases[k][i] += h;
                m.biases[k][i] -= h;
                numeric.push((loss(&p) - loss(&m)) / (2.0 * h));
                analytic.push(grads.biases[k][i]);
            }
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() / scale < 1e-5, "{a} vs {n}");
        }
    }
}
