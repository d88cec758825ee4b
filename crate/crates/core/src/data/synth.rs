//! Synthetic stand-ins for MR slice datasets.
//!
//! Every image is a smooth background of broad Gaussian blobs. Lesion
//! classes add a bright structure on top; all images receive Gaussian noise
//! with sigma 0.05 and are clamped to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, GrayImage};
use crate::error::{Error, Result};
use crate::par;

pub const NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// "normal" background vs "tumor" background plus an ellipsoidal lesion.
    Detect2,
    /// Three lesion morphologies: filled disk, annulus, elongated bar.
    Classify3,
    /// "normal" plus the three morphologies, for chained two-phase runs.
    Analysis4,
}

impl SynthKind {
    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            SynthKind::Detect2 => &["normal", "tumor"],
            SynthKind::Classify3 => &["disk", "annulus", "bar"],
            SynthKind::Analysis4 => &["normal", "disk", "annulus", "bar"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn lesion(self, class: usize) -> Lesion {
        match (self, class) {
            (SynthKind::Detect2, 0) | (SynthKind::Analysis4, 0) => Lesion::None,
            (SynthKind::Detect2, _) => Lesion::Ellipse,
            (SynthKind::Classify3, c) => [Lesion::Disk, Lesion::Annulus, Lesion::Bar][c],
            (SynthKind::Analysis4, c) => [Lesion::Disk, Lesion::Annulus, Lesion::Bar][c - 1],
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detect2" => Ok(SynthKind::Detect2),
            "classify3" => Ok(SynthKind::Classify3),
            "analysis4" => Ok(SynthKind::Analysis4),
            other => Err(Error::config(format!("unknown synthetic dataset kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Lesion {
    None,
    Ellipse,
    Disk,
    Annulus,
    Bar,
}

/// Soft 0..1 coverage for a signed distance (negative inside).
#[inline]
fn coverage(signed_distance: f64) -> f64 {
    (0.5 - signed_distance).clamp(0.0, 1.0)
}

fn render(lesion: Lesion, size: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let s = size as f64;
    let c = (s - 1.0) / 2.0;
    let mut px = vec![0.0; size * size];

    // background: a broad head-like blob plus a few smaller ones
    let blobs = 3 + rng.random_range(0..3);
    for b in 0..blobs {
        let (amp, sigma, spread) = if b == 0 {
            (rng.random_range(0.25..0.35), rng.random_range(0.28..0.36) * s, 0.05 * s)
        } else {
            (rng.random_range(0.05..0.15), rng.random_range(0.10..0.22) * s, 0.25 * s)
        };
        let bx = c + rng.random_range(-spread..spread);
        let by = c + rng.random_range(-spread..spread);
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                px[y * size + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }

    let amp = rng.random_range(0.4..0.6);
    let cx = c + rng.random_range(-0.2..0.2) * s;
    let cy = c + rng.random_range(-0.2..0.2) * s;
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (st, ct) = theta.sin_cos();
    let shape: Option<Box<dyn Fn(f64, f64) -> f64>> = match lesion {
        Lesion::None => None,
        Lesion::Ellipse => {
            let a = rng.random_range(0.06..0.15) * s;
            let b = rng.random_range(0.06..0.15) * s;
            Some(Box::new(move |u: f64, v: f64| {
                let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                (r - 1.0) * a.min(b)
            }))
        }
        Lesion::Disk => {
            let r0 = rng.random_range(0.10..0.18) * s;
            Some(Box::new(move |u: f64, v: f64| (u * u + v * v).sqrt() - r0))
        }
        Lesion::Annulus => {
            let r0 = rng.random_range(0.12..0.20) * s;
            let half = 0.025 * s;
            Some(Box::new(move |u: f64, v: f64| {
                ((u * u + v * v).sqrt() - r0).abs() - half
            }))
        }
        Lesion::Bar => {
            let half_len = rng.random_range(0.17..0.25) * s;
            let half_w = rng.random_range(0.03..0.045) * s;
            Some(Box::new(move |u: f64, v: f64| {
                (u.abs() - half_len).max(v.abs() - half_w)
            }))
        }
    };
    if let Some(sd) = shape {
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = ct * dx + st * dy;
                let v = -st * dx + ct * dy;
                px[y * size + x] += amp * coverage(sd(u, v));
            }
        }
    }

    let noise = Normal::new(0.0, NOISE_SIGMA).unwrap();
    for p in &mut px {
        *p += noise.sample(rng);
    }
    GrayImage::new(size, size, px).expect("synthetic image dims are valid")
}

/// Class-balanced synthetic dataset, ordered class by class. Deterministic in `seed`.
pub fn synth_dataset(kind: SynthKind, n_per_class: usize, image_size: usize, seed: u64) -> Result<Dataset> {
    if n_per_class < 3 {
        return Err(Error::config(format!(
            "need at least 3 images per class, got {n_per_class}"
        )));
    }
    if image_size < 8 {
        return Err(Error::config(format!(
            "image size {image_size} below the 8-pixel minimum"
        )));
    }
    let names = kind.class_names();
    let total = names.len() * n_per_class;
    let images = par::map_range(total, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        render(kind.lesion(i / n_per_class), image_size, &mut rng)
    });
    let labels = (0..total).map(|i| i / n_per_class).collect();
    Dataset::new(images, labels, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_dataset(SynthKind::Classify3, 4, 32, 5).unwrap();
        let b = synth_dataset(SynthKind::Classify3, 4, 32, 5).unwrap();
        assert_eq!(a, b);
        for c in 0..3 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 4);
        }
        assert_ne!(a, synth_dataset(SynthKind::Classify3, 4, 32, 6).unwrap());
    }

    #[test]
    fn lesions_raise_mean_intensity() {
        let d = synth_dataset(SynthKind::Detect2, 40, 32, 11).unwrap();
        let mean_of = |c: usize| {
            let v: Vec<f64> = d
                .images
                .iter()
                .zip(&d.labels)
                .filter(|(_, &l)| l == c)
                .map(|(i, _)| i.mean())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_of(1) > mean_of(0));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("detect2".parse::<SynthKind>().unwrap(), SynthKind::Detect2);
        assert!("nope".parse::<SynthKind>().is_err());
    }
}
