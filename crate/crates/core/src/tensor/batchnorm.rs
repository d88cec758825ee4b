use serde::{Deserialize, Serialize};

use super::{Mode, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by a forward call for the matching backward call.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

fn layout(input: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let shape = input.shape();
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::dim(format!(
            "batch norm over {channels} channels cannot take input {shape:?}"
        )));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

/// Per-channel normalization over the batch and spatial axes.
///
/// Train mode uses batch statistics and updates the running averages;
/// infer mode uses the running averages only.
pub fn batch_norm(input: &Tensor, params: &mut BatchNormParams, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
    let c = params.channels();
    let (n, spatial) = layout(input, c)?;
    let x = input.data();
    let m = (n * spatial) as f64;
    let mut inv_std = vec![0.0; c];
    let mut mean = vec![0.0; c];

    match mode {
        Mode::Train => {
            for ch in 0..c {
                let mut sum = 0.0;
                for i in 0..n {
                    let base = (i * c + ch) * spatial;
                    sum += x[base..base + spatial].iter().sum::<f64>();
                }
                let mu = sum / m;
                let mut sq = 0.0;
                for i in 0..n {
                    let base = (i * c + ch) * spatial;
                    sq += x[base..base + spatial].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                }
                let var = sq / m;
                if n == 1 && var == 0.0 {
                    return Err(Error::NormalizationDegenerate(format!(
                        "channel {ch} has zero variance in a batch of one"
                    )));
                }
                mean[ch] = mu;
                inv_std[ch] = 1.0 / (var + params.epsilon).sqrt();
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                let mo = params.momentum;
                params.running_mean[ch] = (1.0 - mo) * params.running_mean[ch] + mo * mu;
                params.running_var[ch] = (1.0 - mo) * params.running_var[ch] + mo * unbiased;
            }
        }
        Mode::Infer => {
            for ch in 0..c {
                mean[ch] = params.running_mean[ch];
                inv_std[ch] = 1.0 / (params.running_var[ch] + params.epsilon).sqrt();
            }
        }
    }

    let mut x_hat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * spatial;
            let (mu, is, g, b) = (mean[ch], inv_std[ch], params.gamma[ch], params.beta[ch]);
            for k in base..base + spatial {
                let h = (x[k] - mu) * is;
                x_hat[k] = h;
                out[k] = g * h + b;
            }
        }
    }
    let cache = BatchNormCache {
        mode,
        x_hat,
        inv_std,
        shape: input.shape().to_vec(),
    };
    Ok((input.with_shape_of(out), cache))
}

/// Returns `(input_grad, gamma_grad, beta_grad)`.
pub fn batch_norm_backward(
    cache: &BatchNormCache,
    params: &BatchNormParams,
    upstream: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    if upstream.shape() != cache.shape.as_slice() {
        return Err(Error::State(format!(
            "batch norm backward: upstream {:?} vs cached {:?}",
            upstream.shape(),
            cache.shape
        )));
    }
    let c = params.channels();
    let (n, spatial) = layout(upstream, c)?;
    let dy = upstream.data();
    let m = (n * spatial) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * spatial;
            for k in base..base + spatial {
                dgamma[ch] += dy[k] * cache.x_hat[k];
                dbeta[ch] += dy[k];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * spatial;
            let scale = params.gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Infer => {
                    for k in base..base + spatial {
                        dx[k] = scale * dy[k];
                    }
                }
                Mode::Train => {
                    let mean_dy = dbeta[ch] / m;
                    let mean_dy_xhat = dgamma[ch] / m;
                    for k in base..base + spatial {
                        dx[k] = scale * (dy[k] - mean_dy - cache.x_hat[k] * mean_dy_xhat);
                    }
                }
            }
        }
    }
    Ok((upstream.with_shape_of(dx), dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_stats(t: &Tensor, c: usize) -> Vec<(f64, f64)> {
        let (n, spatial) = layout(t, c).unwrap();
        (0..c)
            .map(|ch| {
                let vals: Vec<f64> = (0..n)
                    .flat_map(|i| t.data()[(i * c + ch) * spatial..(i * c + ch + 1) * spatial].to_vec())
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                (mean, var)
            })
            .collect()
    }

    #[test]
    fn train_mode_standardizes() {
        let x = Tensor::from_fn(&[4, 2, 3, 3], |i| ((i * 37) % 11) as f64 * 0.3 - 1.0);
        let before = channel_stats(&x, 2);
        let mut p = BatchNormParams::new(2);
        let (y, _) = batch_norm(&x, &mut p, Mode::Train).unwrap();
        for (ch, (mean, var)) in channel_stats(&y, 2).into_iter().enumerate() {
            let target = before[ch].1 / (before[ch].1 + p.epsilon);
            assert!(mean.abs() <= 1e-6);
            assert!((var - target).abs() <= 1e-6);
        }
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor::filled(&[3, 1, 2, 2], 4.2);
        let mut p = BatchNormParams::new(1);
        let (y, _) = batch_norm(&x, &mut p, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infer_with_unit_stats_is_near_identity() {
        let x = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64 * 0.1);
        let mut p = BatchNormParams::new(3);
        let (y, _) = batch_norm(&x, &mut p, Mode::Infer).unwrap();
        let scale = 1.0 / (1.0 + p.epsilon).sqrt();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a * scale - b).abs() < 1e-12);
            assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn degenerate_single_sample() {
        let x = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let mut p = BatchNormParams::new(1);
        assert!(matches!(
            batch_norm(&x, &mut p, Mode::Train),
            Err(Error::NormalizationDegenerate(_))
        ));
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let x = Tensor::from_fn(&[2, 1, 1, 2], |i| i as f64);
        let mut p = BatchNormParams::new(1);
        batch_norm(&x, &mut p, Mode::Train).unwrap();
        assert!((p.running_mean[0] - 0.15).abs() < 1e-12);
        assert!(p.running_var[0] >= 0.0);
    }
}
