use serde::{Deserialize, Serialize};

use super::{dims4_of, match_rank, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Average,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub kind: PoolKind,
}

impl PoolSpec {
    /// Non-overlapping window (stride equals the window size).
    pub fn new(window: usize, kind: PoolKind) -> Self {
        PoolSpec {
            window,
            stride: window,
            kind,
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::config("pool window and stride must be positive"));
        }
        if self.window > h || self.window > w {
            return Err(Error::dim(format!(
                "pool window {} larger than input {h}x{w}",
                self.window
            )));
        }
        Ok(((h - self.window) / self.stride + 1, (w - self.window) / self.stride + 1))
    }
}

fn pool_forward(input: &Tensor, spec: &PoolSpec, max: bool) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = spec.output_dims(h, w)?;
    let t = spec.window;
    let planes = n * c;
    let x = input.data();
    let norm = 1.0 / (t * t) as f64;

    let results: Vec<(Vec<f64>, Vec<usize>)> = par::map_range(planes, |p| {
        let base = p * h * w;
        let mut vals = Vec::with_capacity(oh * ow);
        let mut idx = Vec::with_capacity(if max { oh * ow } else { 0 });
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = oy * spec.stride;
                let x0 = ox * spec.stride;
                if max {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = base + y0 * w + x0;
                    for dy in 0..t {
                        for dx in 0..t {
                            let i = base + (y0 + dy) * w + x0 + dx;
                            // strict comparison keeps the first maximum in row-major order
                            if x[i] > best {
                                best = x[i];
                                arg = i;
                            }
                        }
                    }
                    vals.push(best);
                    idx.push(arg);
                } else {
                    let mut acc = 0.0;
                    for dy in 0..t {
                        let row = base + (y0 + dy) * w + x0;
                        acc += x[row..row + t].iter().sum::<f64>();
                    }
                    vals.push(acc * norm);
                }
            }
        }
        (vals, idx)
    });

    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::new();
    for (v, i) in results {
        out.extend(v);
        arg.extend(i);
    }
    Ok((match_rank(input, Tensor::raw(vec![n, c, oh, ow], out)), arg))
}

/// Mean over each `t x t` window.
pub fn avg_pool(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    Ok(pool_forward(input, spec, false)?.0)
}

/// Max over each window, with the flat input index of each maximum.
///
/// Ties resolve to the first element in row-major order.
pub fn max_pool(input: &Tensor, spec: &PoolSpec) -> Result<(Tensor, Vec<usize>)> {
    pool_forward(input, spec, true)
}

pub fn avg_pool_backward(input_shape: &[usize], spec: &PoolSpec, upstream: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dims4_of(input_shape)?;
    let (oh, ow) = spec.output_dims(h, w)?;
    let (un, uc, uh, uw) = upstream.dims4()?;
    if (un, uc, uh, uw) != (n, c, oh, ow) {
        return Err(Error::State(format!(
            "upstream {:?} does not match pooled shape [{n}, {c}, {oh}, {ow}]",
            upstream.shape()
        )));
    }
    let t = spec.window;
    let share = 1.0 / (t * t) as f64;
    let up = upstream.data();
    let mut grad = vec![0.0; n * c * h * w];
    par::chunks_mut(&mut grad, h * w, |p, dst| {
        let ub = p * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = up[ub + oy * ow + ox] * share;
                for dy in 0..t {
                    let row = (oy * spec.stride + dy) * w + ox * spec.stride;
                    for v in &mut dst[row..row + t] {
                        *v += g;
                    }
                }
            }
        }
    });
    Tensor::new(input_shape.to_vec(), grad)
}

pub fn max_pool_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Result<Tensor> {
    if argmax.len() != upstream.len() {
        return Err(Error::State(format!(
            "{} recorded argmax positions for {} upstream values",
            argmax.len(),
            upstream.len()
        )));
    }
    let len: usize = input_shape.iter().product();
    let mut grad = vec![0.0; len];
    for (&i, &g) in argmax.iter().zip(upstream.data()) {
        if i >= len {
            return Err(Error::State(format!("argmax index {i} outside input of {len}")));
        }
        grad[i] += g;
    }
    Tensor::new(input_shape.to_vec(), grad)
}
