use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Fully connected layer parameters: `weights` is `[out_dim, in_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(Error::dim(format!(
                "dense {out_dim}x{in_dim} needs {} weights and {out_dim} biases, got {} and {}",
                out_dim * in_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(DenseParams {
            out_dim,
            in_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseParams {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `weights · input + bias` for a single vector.
pub fn dense(input: &[f64], params: &DenseParams) -> Result<Vec<f64>> {
    if input.len() != params.in_dim {
        return Err(Error::dim(format!(
            "dense input length {} != in_dim {}",
            input.len(),
            params.in_dim
        )));
    }
    let mut out = vec![0.0; params.out_dim];
    params.apply(input, &mut out);
    Ok(out)
}

/// Row-wise dense layer. Any trailing axes are flattened into the feature axis.
pub fn dense_batch(input: &Tensor, params: &DenseParams) -> Result<Tensor> {
    let n = input.shape()[0];
    let per = input.len() / n;
    if per != params.in_dim {
        return Err(Error::dim(format!(
            "dense input length {per} != in_dim {}",
            params.in_dim
        )));
    }
    let x = input.data();
    let mut out = vec![0.0; n * params.out_dim];
    par::chunks_mut(&mut out, params.out_dim, |i, dst| {
        params.apply(&x[i * per..(i + 1) * per], dst);
    });
    Ok(Tensor::raw(vec![n, params.out_dim], out))
}

pub fn dense_backward(input: &Tensor, params: &DenseParams, upstream: &Tensor) -> Result<DenseGrads> {
    let n = input.shape()[0];
    let per = input.len() / n;
    if per != params.in_dim || upstream.len() != n * params.out_dim {
        return Err(Error::State(format!(
            "dense backward: input {:?} / upstream {:?} inconsistent with {}x{} layer",
            input.shape(),
            upstream.shape(),
            params.out_dim,
            params.in_dim
        )));
    }
    let x = input.data();
    let up = upstream.data();
    let (out_dim, in_dim) = (params.out_dim, params.in_dim);

    let mut gw = vec![0.0; out_dim * in_dim];
    par::chunks_mut(&mut gw, in_dim, |o, row| {
        for i in 0..n {
            let u = up[i * out_dim + o];
            if u != 0.0 {
                for (g, &v) in row.iter_mut().zip(&x[i * in_dim..(i + 1) * in_dim]) {
                    *g += u * v;
                }
            }
        }
    });
    let gb: Vec<f64> = (0..out_dim)
        .map(|o| (0..n).map(|i| up[i * out_dim + o]).sum())
        .collect();

    let mut gx = vec![0.0; n * in_dim];
    par::chunks_mut(&mut gx, in_dim, |i, dst| {
        for o in 0..out_dim {
            let u = up[i * out_dim + o];
            if u != 0.0 {
                let row = &params.weights[o * in_dim..(o + 1) * in_dim];
                for (g, &w) in dst.iter_mut().zip(row) {
                    *g += u * w;
                }
            }
        }
    });

    Ok(DenseGrads {
        input: input.with_shape_of(gx),
        weights: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_bias_only() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let p = DenseParams::new(3, 3, eye, vec![0.0; 3]).unwrap();
        assert_eq!(dense(&[1.0, -2.0, 3.5], &p).unwrap(), vec![1.0, -2.0, 3.5]);

        let p = DenseParams::new(2, 3, vec![0.0; 6], vec![0.25, -1.0]).unwrap();
        assert_eq!(dense(&[9.0, 9.0, 9.0], &p).unwrap(), vec![0.25, -1.0]);
    }

    #[test]
    fn hand_product() {
        let p = DenseParams::new(2, 3, vec![1.0, 2.0, 3.0, 0.0, 1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(dense(&[1.0, 1.0, 1.0], &p).unwrap(), vec![6.0, 2.0]);
    }

    #[test]
    fn length_mismatch() {
        let p = DenseParams::zeros(2, 3);
        assert!(matches!(dense(&[1.0], &p), Err(Error::Dimension(_))));
    }
}
