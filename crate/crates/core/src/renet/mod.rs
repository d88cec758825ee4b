//! BRAIN-RENet: a six-block CNN whose blocks run conv -> ReLU -> batch norm
//! and then pool with both average and max pooling, followed by two fully
//! connected layers. The first of those (`fc1`) supplies the deep features.

mod io;

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentSpec, Dataset, GrayImage};
use crate::error::{Error, Result};
use crate::fusion::FeatureMatrix;
use crate::par;
use crate::tensor::{
    avg_pool, avg_pool_backward, batch_norm, batch_norm_backward, conv2d, conv2d_backward, dense_backward, dense_batch,
    dropout, dropout_backward, max_pool, max_pool_backward, relu, relu_backward, softmax_cross_entropy, BatchNormCache,
    BatchNormParams, ConvSpec, DenseParams, Mode, PoolKind, PoolSpec, Tensor,
};

pub const BLOCKS: usize = 6;

/// How the two pooling operators at the end of a block are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Average and max pooling side by side, concatenated on channels.
    Concat,
    /// Even blocks average-pool, odd blocks max-pool.
    Alternate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrainReNetConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub num_classes: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: (usize, usize),
    pub pool_window: usize,
    pub fc1_width: usize,
    pub dropout_rate: f64,
    pub pooling: PoolingMode,
}

impl Default for BrainReNetConfig {
    fn default() -> Self {
        BrainReNetConfig {
            input_height: 64,
            input_width: 64,
            num_classes: 2,
            conv_channels: vec![8, 16, 32, 32, 64, 64],
            kernel: (3, 3),
            pool_window: 2,
            fc1_width: 128,
            dropout_rate: 0.5,
            pooling: PoolingMode::Concat,
        }
    }
}

impl BrainReNetConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        BrainReNetConfig {
            num_classes,
            ..Self::default()
        }
    }

    /// Check the config, requiring the standard six blocks.
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != BLOCKS {
            return Err(Error::config(format!(
                "BRAIN-RENet has exactly {BLOCKS} blocks, config lists {} channel counts",
                self.conv_channels.len()
            )));
        }
        self.validate_any_depth()
    }

    /// As [`validate`](Self::validate) but accepting any non-zero block count.
    pub fn validate_any_depth(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::config("conv channel counts must be positive and non-empty"));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.kernel.0 == 0
            || self.kernel.1 == 0
            || self.kernel.0.is_multiple_of(2)
            || self.kernel.1.is_multiple_of(2)
        {
            return Err(Error::config(format!(
                "kernel {:?} must have odd positive extents",
                self.kernel
            )));
        }
        if self.pool_window < 1 || self.fc1_width == 0 {
            return Err(Error::config("pool window and fc1 width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        self.final_extent().map(|_| ())
    }

    /// Spatial size after every block, checking that each pooling has room.
    pub fn spatial_trace(&self) -> Result<Vec<(usize, usize)>> {
        let mut trace = vec![(self.input_height, self.input_width)];
        let (mut h, mut w) = (self.input_height, self.input_width);
        for b in 0..self.conv_channels.len() {
            if h < self.pool_window || w < self.pool_window {
                return Err(Error::config(format!(
                    "input {}x{} too small: block {} sees {h}x{w}, below pool window {}",
                    self.input_height,
                    self.input_width,
                    b + 1,
                    self.pool_window
                )));
            }
            h /= self.pool_window;
            w /= self.pool_window;
            trace.push((h, w));
        }
        Ok(trace)
    }

    fn final_extent(&self) -> Result<(usize, usize)> {
        Ok(*self.spatial_trace()?.last().expect("non-empty trace"))
    }

    fn block_out_channels(&self, block: usize) -> usize {
        let c = self.conv_channels[block];
        match self.pooling {
            PoolingMode::Concat => 2 * c,
            PoolingMode::Alternate => c,
        }
    }

    fn block_in_channels(&self, block: usize) -> usize {
        if block == 0 {
            1
        } else {
            self.block_out_channels(block - 1)
        }
    }

    fn block_pools(&self, block: usize) -> &'static [PoolKind] {
        match (self.pooling, block % 2) {
            (PoolingMode::Concat, _) => &[PoolKind::Average, PoolKind::Max],
            (PoolingMode::Alternate, 0) => &[PoolKind::Average],
            (PoolingMode::Alternate, _) => &[PoolKind::Max],
        }
    }

    /// Length of the flattened last-block output feeding `fc1`.
    pub fn flatten_len(&self) -> Result<usize> {
        let (h, w) = self.final_extent()?;
        Ok(self.block_out_channels(self.conv_channels.len() - 1) * h * w)
    }

    /// Stored parameter count:
    /// `sum_b (Ci*Co*r*s + Co + 4*Co) + (F*fc1 + fc1) + (fc1*K + K)`
    /// where the `4*Co` are batch-norm gamma, beta and running mean/variance,
    /// `F` is the flatten length and `K` the class count.
    pub fn param_count(&self) -> Result<usize> {
        let (r, s) = self.kernel;
        let blocks: usize = (0..self.conv_channels.len())
            .map(|b| {
                let (ci, co) = (self.block_in_channels(b), self.conv_channels[b]);
                ci * co * r * s + co + 4 * co
            })
            .sum();
        let f = self.flatten_len()?;
        Ok(blocks + f * self.fc1_width + self.fc1_width + self.fc1_width * self.num_classes + self.num_classes)
    }

    fn conv_spec(&self) -> ConvSpec {
        ConvSpec::same(self.kernel.0, self.kernel.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    /// `[Co, Ci, r, s]`.
    pub filters: Tensor,
    pub bias: Vec<f64>,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrainReNetModel {
    pub config: BrainReNetConfig,
    pub seed: u64,
    pub blocks: Vec<ConvBlock>,
    pub fc1: DenseParams,
    pub fc2: DenseParams,
}

fn he_weights(n: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Build a He-initialized model with the standard six blocks.
pub fn build_model(config: &BrainReNetConfig, seed: u64) -> Result<BrainReNetModel> {
    config.validate()?;
    build(config, seed)
}

/// Build a model with any number of blocks. The shallow variants exist for
/// end-to-end gradient checks on small inputs.
pub fn build_model_any_depth(config: &BrainReNetConfig, seed: u64) -> Result<BrainReNetModel> {
    config.validate_any_depth()?;
    build(config, seed)
}

fn build(config: &BrainReNetConfig, seed: u64) -> Result<BrainReNetModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, s) = config.kernel;
    let blocks = (0..config.conv_channels.len())
        .map(|b| {
            let (ci, co) = (config.block_in_channels(b), config.conv_channels[b]);
            let fan_in = ci * r * s;
            ConvBlock {
                filters: Tensor::raw(vec![co, ci, r, s], he_weights(co * fan_in, fan_in, &mut rng)),
                bias: vec![0.0; co],
                bn: BatchNormParams::new(co),
            }
        })
        .collect();
    let f = config.flatten_len()?;
    let fc1 = DenseParams::new(
        config.fc1_width,
        f,
        he_weights(config.fc1_width * f, f, &mut rng),
        vec![0.0; config.fc1_width],
    )?;
    let fc2 = DenseParams::new(
        config.num_classes,
        config.fc1_width,
        he_weights(config.num_classes * config.fc1_width, config.fc1_width, &mut rng),
        vec![0.0; config.num_classes],
    )?;
    Ok(BrainReNetModel {
        config: config.clone(),
        seed,
        blocks,
        fc1,
        fc2,
    })
}

struct BlockCache {
    input: Tensor,
    conv_out: Tensor,
    bn: BatchNormCache,
    bn_out_shape: Vec<usize>,
    argmax: Vec<usize>,
}

struct ForwardTrace {
    blocks: Vec<BlockCache>,
    flat: Tensor,
    fc1_pre: Tensor,
    fc1_act: Tensor,
    dropout_mask: Option<Vec<f64>>,
}

/// Gradients in [`BrainReNetModel::trainable_mut`] order.
pub type Gradients = Vec<Vec<f64>>;

/// Stack `[N, C, h, w]` tensors along the channel axis.
fn concat_channels(parts: &[Tensor]) -> Tensor {
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let (n, _, h, w) = parts[0].dims4().expect("rank-4 pool output");
    let plane = h * w;
    let total_c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(n * total_c * plane);
    for i in 0..n {
        for p in parts {
            let c = p.shape()[1];
            out.extend_from_slice(&p.data()[i * c * plane..(i + 1) * c * plane]);
        }
    }
    Tensor::raw(vec![n, total_c, h, w], out)
}

/// Inverse of [`concat_channels`] for equal channel splits.
fn split_channels(t: &Tensor, parts: usize) -> Vec<Tensor> {
    if parts == 1 {
        return vec![t.clone()];
    }
    let (n, c, h, w) = t.dims4().expect("rank-4 gradient");
    let cp = c / parts;
    let chunk = cp * h * w;
    (0..parts)
        .map(|k| {
            let mut data = Vec::with_capacity(n * chunk);
            for i in 0..n {
                let base = i * c * h * w + k * chunk;
                data.extend_from_slice(&t.data()[base..base + chunk]);
            }
            Tensor::raw(vec![n, cp, h, w], data)
        })
        .collect()
}

impl BrainReNetModel {
    /// Mutable views of every trained parameter: per block the filters,
    /// conv bias, gamma and beta, then fc1 weights/bias and fc2 weights/bias.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.filters.data_mut());
            out.push(&mut b.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        out.push(&mut self.fc1.weights);
        out.push(&mut self.fc1.bias);
        out.push(&mut self.fc2.weights);
        out.push(&mut self.fc2.bias);
        out
    }

    /// Whether each [`trainable_mut`](Self::trainable_mut) entry receives weight decay.
    pub fn decayed_params(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for _ in &self.blocks {
            out.extend([true, false, false, false]);
        }
        out.extend([true, false, true, false]);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| {
            b.filters.is_finite()
                && b.bias
                    .iter()
                    .chain(&b.bn.gamma)
                    .chain(&b.bn.beta)
                    .chain(&b.bn.running_mean)
                    .chain(&b.bn.running_var)
                    .all(|v| v.is_finite())
        }) && self
            .fc1
            .weights
            .iter()
            .chain(&self.fc1.bias)
            .chain(&self.fc2.weights)
            .chain(&self.fc2.bias)
            .all(|v| v.is_finite())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let (_, c, h, w) = batch.dims4()?;
        if c != 1 || h != self.config.input_height || w != self.config.input_width {
            return Err(Error::dim(format!(
                "model expects [N, 1, {}, {}] input, got {:?}",
                self.config.input_height,
                self.config.input_width,
                batch.shape()
            )));
        }
        Ok(())
    }

    fn run(&mut self, batch: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Tensor, ForwardTrace)> {
        self.check_batch(batch)?;
        let spec = self.config.conv_spec();
        let window = self.config.pool_window;
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter_mut().enumerate() {
            let conv_out = conv2d(&x, &block.filters, &block.bias, &spec)?;
            let act = relu(&conv_out);
            let (normed, bn) = batch_norm(&act, &mut block.bn, mode)?;
            let mut outs = Vec::with_capacity(2);
            let mut argmax = Vec::new();
            for &kind in self.config.block_pools(b) {
                let ps = PoolSpec::new(window, kind);
                match kind {
                    PoolKind::Average => outs.push(avg_pool(&normed, &ps)?),
                    PoolKind::Max => {
                        let (o, idx) = max_pool(&normed, &ps)?;
                        argmax = idx;
                        outs.push(o);
                    }
                }
            }
            let next = concat_channels(&outs);
            caches.push(BlockCache {
                input: x,
                conv_out,
                bn,
                bn_out_shape: normed.shape().to_vec(),
                argmax,
            });
            x = next;
        }
        let n = x.shape()[0];
        let flat = x.reshape(vec![n, self.fc1.in_dim])?;
        let fc1_pre = dense_batch(&flat, &self.fc1)?;
        let fc1_act = relu(&fc1_pre);
        let (dropped, mask) = dropout(&fc1_act, self.config.dropout_rate, mode, rng)?;
        let logits = dense_batch(&dropped, &self.fc2)?;
        Ok((
            logits,
            ForwardTrace {
                blocks: caches,
                flat,
                fc1_pre,
                fc1_act,
                dropout_mask: mask,
            },
        ))
    }

    fn backprop(&self, trace: &ForwardTrace, dlogits: &Tensor) -> Result<Gradients> {
        let dropped = match &trace.dropout_mask {
            None => trace.fc1_act.clone(),
            Some(m) => trace
                .fc1_act
                .with_shape_of(trace.fc1_act.data().iter().zip(m).map(|(a, k)| a * k).collect()),
        };
        let g2 = dense_backward(&dropped, &self.fc2, dlogits)?;
        let d_act = dropout_backward(trace.dropout_mask.as_deref(), &g2.input);
        let d_pre = relu_backward(&trace.fc1_pre, &d_act)?;
        let g1 = dense_backward(&trace.flat, &self.fc1, &d_pre)?;

        let spec = self.config.conv_spec();
        let window = self.config.pool_window;
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        let last = &trace.blocks[trace.blocks.len() - 1];
        let (n, _, _, _) = last.input.dims4()?;
        let last_c = self.config.block_out_channels(self.blocks.len() - 1);
        let (fh, fw) = self.config.final_extent()?;
        let mut up = g1.input.reshape(vec![n, last_c, fh, fw])?;
        for (b, (block, cache)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let kinds = self.config.block_pools(b);
            let parts = split_channels(&up, kinds.len());
            let mut d_norm: Option<Tensor> = None;
            for (&kind, g) in kinds.iter().zip(&parts) {
                let d = match kind {
                    PoolKind::Average => avg_pool_backward(&cache.bn_out_shape, &PoolSpec::new(window, kind), g)?,
                    PoolKind::Max => max_pool_backward(&cache.bn_out_shape, &cache.argmax, g)?,
                };
                d_norm = Some(match d_norm {
                    None => d,
                    Some(acc) => acc.with_shape_of(acc.data().iter().zip(d.data()).map(|(a, b)| a + b).collect()),
                });
            }
            let d_norm = d_norm.expect("at least one pool");
            let (d_act, dgamma, dbeta) = batch_norm_backward(&cache.bn, &block.bn, &d_norm)?;
            let d_conv = relu_backward(&cache.conv_out, &d_act)?;
            let g = conv2d_backward(&cache.input, &block.filters, &spec, &d_conv)?;
            block_grads.push([g.filters.into_data(), g.bias, dgamma, dbeta]);
            up = g.input;
        }
        block_grads.reverse();
        let mut grads: Gradients = block_grads.into_iter().flatten().collect();
        grads.extend([g1.weights, g1.bias, g2.weights, g2.bias]);
        Ok(grads)
    }

    /// Forward pass returning `(logits [N, C], fc1 activations [N, fc1_width])`.
    /// Train mode uses batch statistics (updating the running ones) and a
    /// dropout mask drawn from the model seed.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (logits, trace) = self.run(batch, mode, &mut rng)?;
        Ok((logits, trace.fc1_act))
    }

    /// Inference-mode forward pass that leaves the model untouched.
    pub fn infer(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        self.clone().forward(batch, Mode::Infer)
    }

    /// Mean cross-entropy loss of `batch` and its gradient for every
    /// trainable parameter. `dropout_seed` fixes the dropout mask.
    pub fn loss_and_gradients(
        &mut self,
        batch: &Tensor,
        labels: &[usize],
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(f64, Gradients)> {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let (logits, trace) = self.run(batch, mode, &mut rng)?;
        let loss = softmax_cross_entropy(&logits, labels)?;
        Ok((loss.loss, self.backprop(&trace, &loss.grad)?))
    }
}

/// Stack same-sized images into an `[N, 1, H, W]` batch.
pub fn images_to_batch(images: &[&GrayImage]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::data("empty image batch"))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for (i, img) in images.iter().enumerate() {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::dim(format!(
                "image {i} is {}x{}, batch is {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        data.extend_from_slice(img.pixels());
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub shuffle_seed: u64,
    /// Online augmentation, one random transform per image per epoch.
    pub augment: Option<AugmentSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.95,
            epochs: 10,
            batch_size: 16,
            weight_decay: 5e-4,
            shuffle_seed: 0,
            augment: Some(AugmentSpec::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Zero-based epoch whose weights were returned.
    pub best_epoch: Option<usize>,
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| crate::classifiers::argmax(logits.row(i)) == l)
        .count()
}

/// Mean loss and accuracy in inference mode.
pub fn evaluate(model: &BrainReNetModel, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut loss = 0.0;
    let mut hits = 0;
    for start in (0..data.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size.max(1)).min(data.len());
        let imgs: Vec<&GrayImage> = data.images[start..end].iter().collect();
        let labels = &data.labels[start..end];
        let (logits, _) = model.infer(&images_to_batch(&imgs)?)?;
        loss += softmax_cross_entropy(&logits, labels)?.loss * labels.len() as f64;
        hits += correct(&logits, labels);
    }
    Ok((loss / data.len() as f64, hits as f64 / data.len() as f64))
}

const EVAL_BATCH: usize = 64;

/// Consecutive batches of `size`. A trailing batch of one sample is merged
/// into its predecessor, since train-mode batch norm has no statistics for
/// a single 1x1 activation.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = (out.len() - 1) * size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// SGD with classical momentum on softmax cross-entropy.
///
/// Returns the snapshot with the best validation accuracy (earliest on ties),
/// or the final epoch when `val` is empty.
pub fn train(
    model: &BrainReNetModel,
    train_set: &Dataset,
    val: &Dataset,
    tc: &TrainConfig,
    seed: u64,
) -> Result<(BrainReNetModel, TrainHistory)> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("CNN training set is empty"));
    }
    if let Some(&bad) = train_set
        .labels
        .iter()
        .chain(&val.labels)
        .find(|&&l| l >= model.config.num_classes)
    {
        return Err(Error::Label {
            label: bad as i64,
            classes: model.config.num_classes,
        });
    }
    let mut history = TrainHistory::default();
    if tc.epochs == 0 {
        return Ok((model.clone(), history));
    }
    let mut current = model.clone();
    let mut velocity: Vec<Vec<f64>> = current.trainable_mut().iter().map(|p| vec![0.0; p.len()]).collect();
    let decay = current.decayed_params();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.shuffle_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, BrainReNetModel)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut hits = 0;
        for (bi, chunk) in batches(&order, tc.batch_size).into_iter().enumerate() {
            let images: Vec<GrayImage> = match &tc.augment {
                None => chunk.iter().map(|&i| train_set.images[i].clone()).collect(),
                Some(spec) => par::map_slice(chunk, |&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11a_0000_0000);
                    rng.set_stream(((epoch as u64) << 32) | i as u64);
                    augment(&train_set.images[i], spec, &mut rng)
                }),
            };
            let refs: Vec<&GrayImage> = images.iter().collect();
            let batch = images_to_batch(&refs)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let step_seed: u64 = dropout_rng.random();
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
            let (logits, trace) = current.run(&batch, Mode::Train, &mut rng)?;
            let loss = softmax_cross_entropy(&logits, &labels)?;
            epoch_loss += loss.loss * labels.len() as f64;
            hits += correct(&logits, &labels);
            let grads = current.backprop(&trace, &loss.grad)?;
            for (k, (p, g)) in current.trainable_mut().into_iter().zip(&grads).enumerate() {
                let wd = if decay[k] { tc.weight_decay } else { 0.0 };
                for ((w, v), &gi) in p.iter_mut().zip(velocity[k].iter_mut()).zip(g) {
                    *v = tc.momentum * *v - tc.learning_rate * (gi + wd * *w);
                    *w += *v;
                }
            }
            if !current.all_finite() {
                return Err(Error::Convergence {
                    message: format!("CNN parameters became non-finite in epoch {epoch}, batch {bi}"),
                    residual: f64::INFINITY,
                });
            }
        }
        history.train_loss.push(epoch_loss / train_set.len() as f64);
        history.train_accuracy.push(hits as f64 / train_set.len() as f64);
        let (vl, va) = evaluate(&current, val, EVAL_BATCH)?;
        history.val_loss.push(vl);
        history.val_accuracy.push(va);
        log::info!(
            "epoch {}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            epoch + 1,
            history.train_loss[epoch],
            history.train_accuracy[epoch],
            vl,
            va
        );
        if !val.is_empty() && best.as_ref().is_none_or(|(acc, _)| va > *acc) {
            best = Some((va, current.clone()));
            history.best_epoch = Some(epoch);
        }
    }
    Ok(match best {
        Some((_, m)) => (m, history),
        None => {
            history.best_epoch = Some(tc.epochs - 1);
            (current, history)
        }
    })
}

/// `fc1` activations (post-ReLU, inference mode) for each image.
pub fn extract_deep_features(model: &BrainReNetModel, images: &[GrayImage], labels: &[usize]) -> Result<FeatureMatrix> {
    if images.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let width = model.config.fc1_width;
    let mut values = Vec::with_capacity(images.len() * width);
    for chunk in images.chunks(EVAL_BATCH) {
        let refs: Vec<&GrayImage> = chunk.iter().collect();
        let (_, fc1) = model.infer(&images_to_batch(&refs)?)?;
        values.extend_from_slice(fc1.data());
    }
    FeatureMatrix::new(images.len(), width, values, labels.to_vec(), "deep")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> BrainReNetConfig {
        BrainReNetConfig {
            input_height: 8,
            input_width: 8,
            num_classes: 3,
            conv_channels: vec![2, 3],
            fc1_width: 5,
            ..BrainReNetConfig::default()
        }
    }

    #[test]
    fn default_trace_and_flatten() {
        let c = BrainReNetConfig::default();
        let trace: Vec<usize> = c.spatial_trace().unwrap().iter().map(|t| t.0).collect();
        assert_eq!(trace, vec![64, 32, 16, 8, 4, 2, 1]);
        assert_eq!(c.flatten_len().unwrap(), 128);
    }

    #[test]
    fn small_input_rejected() {
        let c = BrainReNetConfig {
            input_height: 32,
            ..BrainReNetConfig::default()
        };
        assert!(matches!(build_model(&c, 0), Err(Error::Config(_))));
        let c = BrainReNetConfig {
            conv_channels: vec![8, 8],
            ..BrainReNetConfig::default()
        };
        assert!(matches!(build_model(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_model() {
        let c = BrainReNetConfig::with_classes(3);
        let a = build_model(&c, 5).unwrap();
        assert_eq!(a, build_model(&c, 5).unwrap());
        assert_ne!(a, build_model(&c, 6).unwrap());
        assert_eq!(a.fc2.out_dim, 3);
    }

    #[test]
    fn infer_is_batch_independent() {
        let mut m = build_model_any_depth(&toy_config(), 1).unwrap();
        let batch = Tensor::from_fn(&[3, 1, 8, 8], |i| ((i * 37) % 11) as f64 / 11.0);
        // move the running statistics away from their initial values
        m.forward(&batch, Mode::Train).unwrap();
        let (all, fc1) = m.infer(&batch).unwrap();
        for i in 0..3 {
            let one = Tensor::new(vec![1, 1, 8, 8], batch.data()[i * 64..(i + 1) * 64].to_vec()).unwrap();
            let (l, f) = m.infer(&one).unwrap();
            for (a, b) in l.data().iter().zip(all.row(i)) {
                assert!((a - b).abs() < 1e-9);
            }
            assert_eq!(f.data(), fc1.row(i));
        }
        assert_eq!(m.infer(&batch).unwrap(), (all, fc1));
    }

    #[test]
    fn alternate_pooling_keeps_channels() {
        let c = BrainReNetConfig {
            pooling: PoolingMode::Alternate,
            ..toy_config()
        };
        let m = build_model_any_depth(&c, 0).unwrap();
        assert_eq!(m.fc1.in_dim, 3 * 2 * 2);
        assert_eq!(m.blocks[1].filters.shape(), &[3, 2, 3, 3]);
        let batch = Tensor::filled(&[2, 1, 8, 8], 0.3);
        assert_eq!(m.infer(&batch).unwrap().0.shape(), &[2, 3]);
    }

    #[test]
    fn wrong_input_size() {
        let m = build_model_any_depth(&toy_config(), 0).unwrap();
        assert!(matches!(
            m.infer(&Tensor::zeros(&[1, 1, 9, 8])),
            Err(Error::Dimension(_))
        ));
    }
}
