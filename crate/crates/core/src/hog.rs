//! Histogram of oriented gradients.
//!
//! Unsigned orientations in `[0, 180)` degrees, magnitude-weighted votes
//! split linearly between the two nearest bin centres (circularly), square
//! blocks of cells normalised with L2-Hys.

use serde::{Deserialize, Serialize};

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::fusion::FeatureMatrix;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Block side in cells.
    pub block_size: usize,
    /// Block step in cells.
    pub block_stride: usize,
    pub bins: usize,
    pub l2hys_clip: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell_size: 8,
            block_size: 2,
            block_stride: 1,
            bins: 9,
            l2hys_clip: 0.2,
        }
    }
}

impl HogConfig {
    /// `(blocks_y, blocks_x)` for a `width x height` image.
    pub fn block_grid(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        if self.bins < 2 {
            return Err(Error::config("HOG needs at least 2 orientation bins"));
        }
        if self.cell_size == 0 || self.block_size == 0 || self.block_stride == 0 {
            return Err(Error::config("HOG cell, block and stride sizes must be positive"));
        }
        if !width.is_multiple_of(self.cell_size) || !height.is_multiple_of(self.cell_size) {
            return Err(Error::config(format!(
                "image {width}x{height} is not divisible into {}-pixel cells",
                self.cell_size
            )));
        }
        let (cx, cy) = (width / self.cell_size, height / self.cell_size);
        if cx < self.block_size || cy < self.block_size {
            return Err(Error::config(format!(
                "{cx}x{cy} cells cannot hold a {0}x{0} block",
                self.block_size
            )));
        }
        Ok((
            (cy - self.block_size) / self.block_stride + 1,
            (cx - self.block_size) / self.block_stride + 1,
        ))
    }

    pub fn descriptor_len(&self, width: usize, height: usize) -> Result<usize> {
        let (by, bx) = self.block_grid(width, height)?;
        Ok(by * bx * self.block_size * self.block_size * self.bins)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
    pub blocks_y: usize,
    pub blocks_x: usize,
    pub cells_per_block: usize,
    pub bins: usize,
}

impl HogDescriptor {
    pub fn block(&self, by: usize, bx: usize) -> &[f64] {
        let len = self.cells_per_block * self.bins;
        let start = (by * self.blocks_x + bx) * len;
        &self.values[start..start + len]
    }
}

/// Centred differences `(I[x+1] - I[x-1]) / 2` with replicated borders.
pub fn image_gradients(image: &GrayImage) -> Result<(Vec<f64>, Vec<f64>)> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(Error::dim(format!("gradients need at least 3x3 pixels, got {w}x{h}")));
    }
    let p = image.pixels();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            gx[y * w + x] = (p[y * w + right] - p[y * w + left]) * 0.5;
            gy[y * w + x] = (p[down * w + x] - p[up * w + x]) * 0.5;
        }
    }
    Ok((gx, gy))
}

/// Two bins and their weights for an unsigned angle in degrees.
#[inline]
pub(crate) fn orientation_vote(angle: f64, bins: usize) -> [(usize, f64); 2] {
    let width = 180.0 / bins as f64;
    let pos = angle / width - 0.5;
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = lo as i64;
    let b = bins as i64;
    [
        (lo.rem_euclid(b) as usize, 1.0 - frac),
        ((lo + 1).rem_euclid(b) as usize, frac),
    ]
}

#[inline]
pub(crate) fn unsigned_angle(gx: f64, gy: f64) -> f64 {
    let mut a = gy.atan2(gx).to_degrees();
    if a < 0.0 {
        a += 180.0;
    }
    if a >= 180.0 {
        a -= 180.0;
    }
    a
}

/// L2 normalise, clip, L2 normalise again. Near-zero blocks become zero.
pub(crate) fn l2_hys(block: &mut [f64], clip: f64) {
    fn normalise(v: &mut [f64]) -> bool {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            v.fill(0.0);
            return false;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        true
    }
    if normalise(block) {
        block.iter_mut().for_each(|x| *x = x.min(clip));
        normalise(block);
    }
}

pub fn hog_descriptor(image: &GrayImage, config: &HogConfig) -> Result<HogDescriptor> {
    let (w, h) = (image.width(), image.height());
    let (blocks_y, blocks_x) = config.block_grid(w, h)?;
    let (gx, gy) = image_gradients(image)?;
    let cs = config.cell_size;
    let (cells_x, cells_y) = (w / cs, h / cs);
    let bins = config.bins;

    let mut cells = vec![0.0; cells_x * cells_y * bins];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mag = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            if mag == 0.0 {
                continue;
            }
            let cell = ((y / cs) * cells_x + x / cs) * bins;
            for (b, wgt) in orientation_vote(unsigned_angle(gx[i], gy[i]), bins) {
                cells[cell + b] += mag * wgt;
            }
        }
    }

    let bs = config.block_size;
    let block_len = bs * bs * bins;
    let mut values = Vec::with_capacity(blocks_y * blocks_x * block_len);
    let mut block = vec![0.0; block_len];
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let (cy0, cx0) = (by * config.block_stride, bx * config.block_stride);
            for dy in 0..bs {
                for dx in 0..bs {
                    let src = ((cy0 + dy) * cells_x + cx0 + dx) * bins;
                    let dst = (dy * bs + dx) * bins;
                    block[dst..dst + bins].copy_from_slice(&cells[src..src + bins]);
                }
            }
            l2_hys(&mut block, config.l2hys_clip);
            values.extend_from_slice(&block);
        }
    }
    Ok(HogDescriptor {
        values,
        blocks_y,
        blocks_x,
        cells_per_block: bs * bs,
        bins,
    })
}

/// HOG descriptors for a set of images as one feature matrix.
pub fn hog_features(images: &[GrayImage], labels: &[usize], config: &HogConfig) -> Result<FeatureMatrix> {
    let rows = par::map_slice(images, |img| hog_descriptor(img, config).map(|d| d.values));
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_rows(&rows, labels.to_vec(), "hog")
}
