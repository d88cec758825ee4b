use super::{
    avg_pool, avg_pool_backward, batch_norm, batch_norm_backward, conv2d, conv2d_backward, dense_backward, dense_batch,
    max_pool, max_pool_backward, relu, relu_backward, BatchNormCache, BatchNormParams, ConvSpec, DenseParams, Mode,
    PoolSpec, Tensor,
};
use crate::error::{Error, Result};

/// A single differentiable layer with its parameters.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d {
        filters: Tensor,
        bias: Vec<f64>,
        spec: ConvSpec,
    },
    AvgPool(PoolSpec),
    MaxPool(PoolSpec),
    Dense(DenseParams),
    Relu,
    BatchNorm {
        params: BatchNormParams,
        mode: Mode,
    },
}

/// State recorded by [`Layer::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Conv2d {
        input: Tensor,
    },
    AvgPool {
        input_shape: Vec<usize>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Dense {
        input: Tensor,
    },
    Relu {
        input: Tensor,
    },
    BatchNorm(BatchNormCache),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::AvgPool(_) => "avg_pool",
            Layer::MaxPool(_) => "max_pool",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::BatchNorm { .. } => "batch_norm",
        }
    }

    /// Batch norm in train mode updates its running statistics, hence `&mut`.
    pub fn forward(&mut self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        Ok(match self {
            Layer::Conv2d { filters, bias, spec } => (
                conv2d(input, filters, bias, spec)?,
                ForwardCache::Conv2d { input: input.clone() },
            ),
            Layer::AvgPool(spec) => (
                avg_pool(input, spec)?,
                ForwardCache::AvgPool {
                    input_shape: input.shape().to_vec(),
                },
            ),
            Layer::MaxPool(spec) => {
                let (out, argmax) = max_pool(input, spec)?;
                (
                    out,
                    ForwardCache::MaxPool {
                        input_shape: input.shape().to_vec(),
                        argmax,
                    },
                )
            }
            Layer::Dense(p) => (dense_batch(input, p)?, ForwardCache::Dense { input: input.clone() }),
            Layer::Relu => (relu(input), ForwardCache::Relu { input: input.clone() }),
            Layer::BatchNorm { params, mode } => {
                let (out, cache) = batch_norm(input, params, *mode)?;
                (out, ForwardCache::BatchNorm(cache))
            }
        })
    }

    /// Input gradient plus parameter gradients in [`Layer::params`] order.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        match (self, cache) {
            (Layer::Conv2d { filters, spec, .. }, ForwardCache::Conv2d { input }) => {
                let g = conv2d_backward(input, filters, spec, upstream)?;
                Ok((g.input, vec![g.filters.into_data(), g.bias]))
            }
            (Layer::AvgPool(spec), ForwardCache::AvgPool { input_shape }) => {
                Ok((avg_pool_backward(input_shape, spec, upstream)?, vec![]))
            }
            (Layer::MaxPool(_), ForwardCache::MaxPool { input_shape, argmax }) => {
                Ok((max_pool_backward(input_shape, argmax, upstream)?, vec![]))
            }
            (Layer::Dense(p), ForwardCache::Dense { input }) => {
                let g = dense_backward(input, p, upstream)?;
                Ok((g.input, vec![g.weights, g.bias]))
            }
            (Layer::Relu, ForwardCache::Relu { input }) => Ok((relu_backward(input, upstream)?, vec![])),
            (Layer::BatchNorm { params, .. }, ForwardCache::BatchNorm(c)) => {
                let (dx, dg, db) = batch_norm_backward(c, params, upstream)?;
                Ok((dx, vec![dg, db]))
            }
            (layer, _) => Err(Error::State(format!(
                "cache does not come from a {} forward pass",
                layer.kind()
            ))),
        }
    }

    /// Trainable parameters. Batch-norm running statistics are not included.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv2d { filters, bias, .. } => vec![filters.data(), bias],
            Layer::Dense(p) => vec![&p.weights, &p.bias],
            Layer::BatchNorm { params, .. } => vec![&params.gamma, &params.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv2d { filters, bias, .. } => vec![filters.data_mut(), bias],
            Layer::Dense(p) => vec![&mut p.weights, &mut p.bias],
            Layer::BatchNorm { params, .. } => vec![&mut params.gamma, &mut params.beta],
            _ => vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::PoolKind;

    #[test]
    fn mismatched_cache_is_state_error() {
        let mut relu = Layer::Relu;
        let (_, cache) = relu.forward(&Tensor::zeros(&[1, 1, 2, 2])).unwrap();
        let pool = Layer::AvgPool(PoolSpec::new(2, PoolKind::Average));
        let err = pool.backward(&cache, &Tensor::zeros(&[1, 1, 1, 1])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }
}
