//! One-hidden-layer perceptron trained by mini-batch SGD with momentum on
//! softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FeatureMatrix;
use crate::tensor::{
    dense_backward, dense_batch, relu, relu_backward, softmax_cross_entropy, softmax_rows, DenseParams, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 100,
            lr: 0.01,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub hidden: DenseParams,
    pub output: DenseParams,
}

impl MlpModel {
    pub fn dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn classes(&self) -> usize {
        self.output.out_dim
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let h = relu(&dense_batch(x, &self.hidden)?);
        dense_batch(&h, &self.output)
    }

    /// Class probabilities, `n x classes`.
    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if x.dim() != self.dim() {
            return Err(Error::dim(format!(
                "MLP trained on {} features, input has {}",
                self.dim(),
                x.dim()
            )));
        }
        if x.n() == 0 {
            return Ok(Vec::new());
        }
        let t = Tensor::new(vec![x.n(), x.dim()], x.values().to_vec())?;
        let p = softmax_rows(&self.logits(&t)?)?;
        Ok((0..x.n()).map(|i| p.row(i).to_vec()).collect())
    }
}

fn he_init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> DenseParams {
    let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("positive std");
    let weights = (0..out_dim * in_dim).map(|_| normal.sample(rng)).collect();
    DenseParams::new(out_dim, in_dim, weights, vec![0.0; out_dim]).expect("consistent sizes")
}

fn momentum_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

pub fn mlp_train(x: &FeatureMatrix, config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    mlp_train_classes(x, x.num_classes().max(2), config, seed)
}

/// As [`mlp_train`] with an explicit output width.
pub fn mlp_train_classes(x: &FeatureMatrix, classes: usize, config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    if x.n() == 0 || x.dim() == 0 {
        return Err(Error::data("MLP training set is empty"));
    }
    if config.hidden == 0 || config.batch_size == 0 {
        return Err(Error::config("MLP hidden width and batch size must be positive"));
    }
    if config.lr.is_nan() || config.lr <= 0.0 || !(0.0..1.0).contains(&config.momentum) {
        return Err(Error::config(format!(
            "MLP needs lr > 0 and momentum in [0, 1), got {} and {}",
            config.lr, config.momentum
        )));
    }
    if let Some(&bad) = x.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::Label {
            label: bad as i64,
            classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel {
        hidden: he_init(config.hidden, x.dim(), &mut rng),
        output: he_init(classes, config.hidden, &mut rng),
    };
    let mut vel = [
        vec![0.0; model.hidden.weights.len()],
        vec![0.0; model.hidden.bias.len()],
        vec![0.0; model.output.weights.len()],
        vec![0.0; model.output.bias.len()],
    ];
    let dim = x.dim();
    let mut order: Vec<usize> = (0..x.n()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut data = Vec::with_capacity(batch.len() * dim);
            let labels: Vec<usize> = batch.iter().map(|&i| x.labels()[i]).collect();
            for &i in batch {
                data.extend_from_slice(x.row(i));
            }
            let input = Tensor::new(vec![batch.len(), dim], data)?;
            let pre = dense_batch(&input, &model.hidden)?;
            let h = relu(&pre);
            let logits = dense_batch(&h, &model.output)?;
            let loss = softmax_cross_entropy(&logits, &labels)?;
            let g_out = dense_backward(&h, &model.output, &loss.grad)?;
            let g_pre = relu_backward(&pre, &g_out.input)?;
            let g_hid = dense_backward(&input, &model.hidden, &g_pre)?;
            let (lr, m) = (config.lr, config.momentum);
            momentum_step(&mut model.hidden.weights, &mut vel[0], &g_hid.weights, lr, m);
            momentum_step(&mut model.hidden.bias, &mut vel[1], &g_hid.bias, lr, m);
            momentum_step(&mut model.output.weights, &mut vel[2], &g_out.weights, lr, m);
            momentum_step(&mut model.output.bias, &mut vel[3], &g_out.bias, lr, m);
        }
    }
    if model
        .hidden
        .weights
        .iter()
        .chain(&model.output.weights)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Convergence {
            message: "MLP parameters diverged".into(),
            residual: f64::INFINITY,
        });
    }
    Ok(model)
}
