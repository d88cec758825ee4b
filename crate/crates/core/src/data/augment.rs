use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrayImage;

/// Ranges each transform component is drawn from, uniformly per image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub rotation_degrees: (f64, f64),
    /// Horizontal shear factor range.
    pub shear: (f64, f64),
    pub scale: (f64, f64),
    /// Mirror left-right with probability 1/2.
    pub reflect_horizontal: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotation_degrees: (0.0, 360.0),
            shear: (-0.5, 0.05),
            scale: (0.5, 1.0),
            reflect_horizontal: true,
        }
    }
}

/// One concrete draw from an [`AugmentSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_degrees: f64,
    pub shear: f64,
    pub scale: f64,
    pub reflect: bool,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation_degrees: 0.0,
        shear: 0.0,
        scale: 1.0,
        reflect: false,
    };

    /// Forward 2x2 map `rotate · shear · scale · reflect`, row-major.
    fn matrix(&self) -> [f64; 4] {
        let (s, c) = self.rotation_degrees.to_radians().sin_cos();
        let f = if self.reflect { -1.0 } else { 1.0 };
        // shear [[1, k], [0, 1]] times diag(scale * f, scale)
        let a = [self.scale * f, self.shear * self.scale, 0.0, self.scale];
        [
            c * a[0] - s * a[2],
            c * a[1] - s * a[3],
            s * a[0] + c * a[2],
            s * a[1] + c * a[3],
        ]
    }
}

fn range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl AugmentSpec {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AffineParams {
        AffineParams {
            rotation_degrees: range(rng, self.rotation_degrees),
            shear: range(rng, self.shear),
            scale: range(rng, self.scale),
            reflect: self.reflect_horizontal && rng.random_bool(0.5),
        }
    }
}

/// Resample `image` under the affine map about its centre. Pixels mapped
/// from outside the source are 0.
pub fn apply_affine(image: &GrayImage, params: &AffineParams) -> GrayImage {
    let m = params.matrix();
    let det = m[0] * m[3] - m[1] * m[2];
    let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
    let (w, h) = (image.width(), image.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let px = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            image.get(x as usize, y as usize)
        }
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let sx = inv[0] * dx + inv[1] * dy + cx;
            let sy = inv[2] * dx + inv[3] * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let tx = sx - x0;
            let ty = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let top = px(x0, y0) * (1.0 - tx) + px(x0 + 1, y0) * tx;
            let bot = px(x0, y0 + 1) * (1.0 - tx) + px(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    GrayImage::new(w, h, out).expect("resampled image keeps its dimensions")
}

/// Draw a transform from `spec` and apply it.
pub fn augment<R: Rng + ?Sized>(image: &GrayImage, spec: &AugmentSpec, rng: &mut R) -> GrayImage {
    apply_affine(image, &spec.sample(rng))
}
