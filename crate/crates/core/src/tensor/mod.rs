//! Dense tensors and the forward/backward kernels the CNN is built from.
//!
//! All spatial kernels operate on `[N, C, H, W]` batches; a rank-3
//! `[C, H, W]` input is treated as a batch of one and the result is returned
//! at rank 3 again.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod gradcheck;
mod layer;
mod loss;
mod pool;

pub use activation::{dropout, dropout_backward, relu, relu_backward};
pub use batchnorm::{batch_norm, batch_norm_backward, BatchNormCache, BatchNormParams};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec, Padding};
pub use dense::{dense, dense_backward, dense_batch, DenseGrads, DenseParams};
pub use gradcheck::{compare_gradient, grad_check, relative_error, GradCheckReport};
pub use layer::{ForwardCache, Layer};
pub use loss::{softmax_cross_entropy, softmax_rows, LossOutput};
pub use pool::{avg_pool, avg_pool_backward, max_pool, max_pool_backward, PoolKind, PoolSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train/inference switch for layers whose behaviour differs between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Interpret as `[N, C, H, W]`, promoting rank-3 input to a batch of one.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        dims4_of(&self.shape)
    }

    /// Interpret as a `[rows, cols]` matrix.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!("expected [rows, cols], got {:?}", self.shape))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.data.len() / self.shape[0];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub(crate) fn with_shape_of(&self, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(data.len(), self.data.len());
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

pub(crate) fn dims4_of(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        [c, h, w] => Ok((1, c, h, w)),
        _ => Err(Error::dim(format!("expected [N, C, H, W] or [C, H, W], got {shape:?}"))),
    }
}

/// Restore the caller's rank after a kernel promoted rank-3 input to rank 4.
pub(crate) fn match_rank(input: &Tensor, out: Tensor) -> Tensor {
    if input.rank() == 3 {
        let s = out.shape[1..].to_vec();
        Tensor {
            shape: s,
            data: out.data,
        }
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn dims4_promotes_rank3() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.dims4().unwrap(), (1, 2, 3, 4));
        assert!(Tensor::zeros(&[3]).dims4().is_err());
    }
}
