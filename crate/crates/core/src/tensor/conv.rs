use serde::{Deserialize, Serialize};

use super::{match_rank, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; output is `(H - r) / stride + 1` per axis.
    Valid,
    /// Zero padding that preserves spatial size. Requires stride 1.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_height: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn valid(kernel_height: usize, kernel_width: usize) -> Self {
        ConvSpec {
            kernel_height,
            kernel_width,
            stride: 1,
            padding: Padding::Valid,
        }
    }

    pub fn same(kernel_height: usize, kernel_width: usize) -> Self {
        ConvSpec {
            kernel_height,
            kernel_width,
            stride: 1,
            padding: Padding::Same,
        }
    }

    /// Leading (top, left) zero padding.
    fn pad(&self) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => ((self.kernel_height - 1) / 2, (self.kernel_width - 1) / 2),
        }
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel_height == 0 || self.kernel_width == 0 || self.stride == 0 {
            return Err(Error::config("kernel extents and stride must be positive"));
        }
        match self.padding {
            Padding::Same => {
                if self.stride != 1 {
                    return Err(Error::config("same padding requires stride 1"));
                }
                let ph = self.kernel_height - 1;
                let pw = self.kernel_width - 1;
                if self.kernel_height > h + ph || self.kernel_width > w + pw {
                    return Err(Error::dim("kernel larger than padded input"));
                }
                Ok((h, w))
            }
            Padding::Valid => {
                let mut bad = Vec::new();
                if self.kernel_height > h {
                    bad.push(format!("height: kernel {} > input {h}", self.kernel_height));
                }
                if self.kernel_width > w {
                    bad.push(format!("width: kernel {} > input {w}", self.kernel_width));
                }
                if !bad.is_empty() {
                    return Err(Error::dim(bad.join("; ")));
                }
                Ok((
                    (h - self.kernel_height) / self.stride + 1,
                    (w - self.kernel_width) / self.stride + 1,
                ))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub filters: Tensor,
    pub bias: Vec<f64>,
}

struct Geometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    r: usize,
    s: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new(input: &Tensor, filters: &Tensor, spec: &ConvSpec) -> Result<Self> {
        let (n, c_in, h, w) = input.dims4()?;
        let (c_out, fc_in, r, s) = match *filters.shape() {
            [a, b, c, d] => (a, b, c, d),
            _ => {
                return Err(Error::dim(format!(
                    "filters must be [C_out, C_in, r, s], got {:?}",
                    filters.shape()
                )))
            }
        };
        if fc_in != c_in {
            return Err(Error::dim(format!(
                "channel axis: input has {c_in}, filters expect {fc_in}"
            )));
        }
        if r != spec.kernel_height || s != spec.kernel_width {
            return Err(Error::dim(format!(
                "kernel axes: filters are {r}x{s}, spec says {}x{}",
                spec.kernel_height, spec.kernel_width
            )));
        }
        let (oh, ow) = spec.output_dims(h, w)?;
        let (pad_top, pad_left) = spec.pad();
        Ok(Geometry {
            n,
            c_in,
            h,
            w,
            c_out,
            r,
            s,
            oh,
            ow,
            stride: spec.stride,
            pad_top,
            pad_left,
        })
    }

    /// Input row touched by output row `oy` at kernel row `ky`, if any.
    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    /// Output column range whose input column at kernel column `kx` is in bounds.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let off = kx as isize - self.pad_left as isize;
        let st = self.stride as isize;
        // ix = ox * stride + off must lie in [0, w)
        let lo = if off >= 0 { 0 } else { ((-off) + st - 1) / st };
        let hi_ix = self.w as isize - 1 - off;
        let hi = if hi_ix < 0 { 0 } else { hi_ix / st + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi as usize).min(self.ow);
        (lo, hi.max(lo))
    }

    #[inline]
    fn in_col(&self, ox: usize, kx: usize) -> usize {
        (ox * self.stride + kx) - self.pad_left
    }
}

/// Sliding-window cross-correlation plus per-channel bias.
pub fn conv2d(input: &Tensor, filters: &Tensor, bias: &[f64], spec: &ConvSpec) -> Result<Tensor> {
    let g = Geometry::new(input, filters, spec)?;
    if bias.len() != g.c_out {
        return Err(Error::dim(format!(
            "bias axis: expected {}, got {}",
            g.c_out,
            bias.len()
        )));
    }
    let in_sample = g.c_in * g.h * g.w;
    let out_sample = g.c_out * g.oh * g.ow;
    let mut out = vec![0.0; g.n * out_sample];
    let x = input.data();
    let k = filters.data();

    par::chunks_mut(&mut out, out_sample, |ni, dst| {
        let src = &x[ni * in_sample..(ni + 1) * in_sample];
        for co in 0..g.c_out {
            let plane = &mut dst[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
            plane.fill(bias[co]);
            for ci in 0..g.c_in {
                let in_plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                for ky in 0..g.r {
                    for kx in 0..g.s {
                        let wv = k[((co * g.c_in + ci) * g.r + ky) * g.s + kx];
                        let (lo, hi) = g.col_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let in_row = &in_plane[iy * g.w..(iy + 1) * g.w];
                            let out_row = &mut plane[oy * g.ow..(oy + 1) * g.ow];
                            if g.stride == 1 {
                                let base = g.in_col(lo, kx);
                                for (o, &v) in out_row[lo..hi].iter_mut().zip(&in_row[base..base + (hi - lo)]) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in lo..hi {
                                    out_row[ox] += wv * in_row[g.in_col(ox, kx)];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Ok(match_rank(input, Tensor::raw(vec![g.n, g.c_out, g.oh, g.ow], out)))
}

/// Gradients of a conv2d call with respect to its input, filters and bias.
pub fn conv2d_backward(input: &Tensor, filters: &Tensor, spec: &ConvSpec, upstream: &Tensor) -> Result<ConvGrads> {
    let g = Geometry::new(input, filters, spec)?;
    let (un, uc, uh, uw) = upstream.dims4()?;
    if (un, uc, uh, uw) != (g.n, g.c_out, g.oh, g.ow) {
        return Err(Error::State(format!(
            "upstream gradient {:?} does not match conv output [{}, {}, {}, {}]",
            upstream.shape(),
            g.n,
            g.c_out,
            g.oh,
            g.ow
        )));
    }
    let x = input.data();
    let k = filters.data();
    let up = upstream.data();
    let in_sample = g.c_in * g.h * g.w;
    let out_sample = g.c_out * g.oh * g.ow;
    let plane_out = g.oh * g.ow;

    // Filter and bias gradients: one task per output channel, samples summed in order.
    let per_channel: Vec<(Vec<f64>, f64)> = par::map_range(g.c_out, |co| {
        let mut gw = vec![0.0; g.c_in * g.r * g.s];
        let mut gb = 0.0;
        for ni in 0..g.n {
            let up_plane = &up[ni * out_sample + co * plane_out..ni * out_sample + (co + 1) * plane_out];
            gb += up_plane.iter().sum::<f64>();
            let src = &x[ni * in_sample..(ni + 1) * in_sample];
            for ci in 0..g.c_in {
                let in_plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                for ky in 0..g.r {
                    for kx in 0..g.s {
                        let (lo, hi) = g.col_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in 0..g.oh {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let in_row = &in_plane[iy * g.w..(iy + 1) * g.w];
                            let up_row = &up_plane[oy * g.ow..(oy + 1) * g.ow];
                            if g.stride == 1 {
                                let base = g.in_col(lo, kx);
                                acc += up_row[lo..hi]
                                    .iter()
                                    .zip(&in_row[base..base + (hi - lo)])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            } else {
                                for ox in lo..hi {
                                    acc += up_row[ox] * in_row[g.in_col(ox, kx)];
                                }
                            }
                        }
                        gw[(ci * g.r + ky) * g.s + kx] += acc;
                    }
                }
            }
        }
        (gw, gb)
    });
    let mut grad_filters = Vec::with_capacity(filters.len());
    let mut grad_bias = Vec::with_capacity(g.c_out);
    for (gw, gb) in per_channel {
        grad_filters.extend(gw);
        grad_bias.push(gb);
    }

    // Input gradient: one task per sample.
    let mut grad_in = vec![0.0; g.n * in_sample];
    par::chunks_mut(&mut grad_in, in_sample, |ni, dst| {
        for co in 0..g.c_out {
            let up_plane = &up[ni * out_sample + co * plane_out..ni * out_sample + (co + 1) * plane_out];
            for ci in 0..g.c_in {
                let gplane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                for ky in 0..g.r {
                    for kx in 0..g.s {
                        let wv = k[((co * g.c_in + ci) * g.r + ky) * g.s + kx];
                        let (lo, hi) = g.col_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let up_row = &up_plane[oy * g.ow..(oy + 1) * g.ow];
                            let grow = &mut gplane[iy * g.w..(iy + 1) * g.w];
                            if g.stride == 1 {
                                let base = g.in_col(lo, kx);
                                for (o, &u) in grow[base..base + (hi - lo)].iter_mut().zip(&up_row[lo..hi]) {
                                    *o += wv * u;
                                }
                            } else {
                                for ox in lo..hi {
                                    grow[g.in_col(ox, kx)] += wv * up_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Ok(ConvGrads {
        input: input.with_shape_of(grad_in),
        filters: filters.with_shape_of(grad_filters),
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn valid_output_shape() {
        let x = Tensor::zeros(&[1, 5, 5]);
        let f = Tensor::zeros(&[1, 1, 3, 3]);
        let y = conv2d(&x, &f, &[0.0], &ConvSpec::valid(3, 3)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
    }

    #[test]
    fn two_by_two_sum() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let f = t(&[1, 1, 2, 2], &[1.0; 4]);
        let y = conv2d(&x, &f, &[0.0], &ConvSpec::valid(2, 2)).unwrap();
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn delta_kernel_same_is_identity() {
        let x = Tensor::from_fn(&[1, 1, 4, 5], |i| (i as f64).sin());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let f = t(&[1, 1, 3, 3], &k);
        let y = conv2d(&x, &f, &[0.0], &ConvSpec::same(3, 3)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn strided_valid_matches_naive() {
        let x = Tensor::from_fn(&[2, 2, 7, 6], |i| ((i * 7919) % 13) as f64 - 6.0);
        let f = Tensor::from_fn(&[3, 2, 3, 2], |i| ((i * 31) % 5) as f64 - 2.0);
        let spec = ConvSpec {
            kernel_height: 3,
            kernel_width: 2,
            stride: 2,
            padding: Padding::Valid,
        };
        let y = conv2d(&x, &f, &[0.5, -1.0, 0.0], &spec).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 3]);
        for n in 0..2 {
            for co in 0..3 {
                for oy in 0..3 {
                    for ox in 0..3 {
                        let mut acc = [0.5, -1.0, 0.0][co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..2 {
                                    acc += f.data()[((co * 2 + ci) * 3 + ky) * 2 + kx]
                                        * x.data()[((n * 2 + ci) * 7 + oy * 2 + ky) * 6 + ox * 2 + kx];
                                }
                            }
                        }
                        assert_eq!(y.data()[((n * 3 + co) * 3 + oy) * 3 + ox], acc);
                    }
                }
            }
        }
    }

    #[test]
    fn errors_name_axes() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let f = Tensor::zeros(&[1, 1, 3, 3]);
        let err = conv2d(&x, &f, &[0.0], &ConvSpec::valid(3, 3)).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
        let f = Tensor::zeros(&[1, 2, 1, 1]);
        let err = conv2d(&x, &f, &[0.0], &ConvSpec::valid(1, 1)).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");
    }

    #[test]
    fn same_padding_rejects_stride() {
        let spec = ConvSpec {
            stride: 2,
            ..ConvSpec::same(3, 3)
        };
        assert!(matches!(spec.output_dims(8, 8), Err(Error::Config(_))));
    }
}
