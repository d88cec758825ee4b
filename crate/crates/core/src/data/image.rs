use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Values are clamped into `[0, 1]`; NaN is rejected.
    pub fn new(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("image dims must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::dim(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        for p in &mut pixels {
            if p.is_nan() {
                return Err(Error::data("NaN pixel"));
            }
            *p = p.clamp(0.0, 1.0);
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let px = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, px)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Mirror left-right. Exact, and its own inverse.
    pub fn reflect_horizontal(&self) -> GrayImage {
        let mut px = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks_exact(self.width) {
            px.extend(row.iter().rev());
        }
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: px,
        }
    }

    /// Encode as binary PGM. `sixteen_bit` selects maxval 65535 over 255.
    pub fn to_pgm(&self, sixteen_bit: bool) -> Vec<u8> {
        let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, maxval).into_bytes();
        for &p in &self.pixels {
            let v = (p * maxval as f64).round() as u32;
            if sixteen_bit {
                out.extend_from_slice(&(v as u16).to_be_bytes());
            } else {
                out.push(v as u8);
            }
        }
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm(true)).map_err(|e| Error::io(path, e))
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match text.parse() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.fail(format!("{what} out of range"))
            }
        }
    }
}

/// Decode a binary (P5) PGM with 8- or 16-bit samples.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut h = Header { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return h.fail("missing P5 magic");
    }
    h.pos = 2;
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return h.fail(format!("maxval {maxval} outside 1..=65535"));
    }
    if width == 0 || height == 0 {
        return h.fail("zero image dimension");
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return h.fail("expected single whitespace after maxval");
    }
    h.pos += 1;
    let sample = if maxval < 256 { 1 } else { 2 };
    let need = width * height * sample;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("raster truncated: need {need} bytes, have {}", raster.len()),
        });
    }
    let scale = maxval as f64;
    let mut px = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let v = if sample == 1 {
            raster[i] as u32
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
        };
        if v > maxval {
            return Err(Error::Format {
                offset: h.pos + i * sample,
                message: format!("sample {v} exceeds maxval {maxval}"),
            });
        }
        px.push(v as f64 / scale);
    }
    GrayImage::new(width, height, px)
}

const PNG_SIGNATURE: &[u8] = &[0x89, b'P', b'N', b'G'];

/// Whether this build can decode PNG input.
pub const PNG_SUPPORTED: bool = false;

pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(PNG_SIGNATURE) {
        return Err(Error::Format {
            offset: 0,
            message: format!("{}: PNG decoding is not available in this build", path.display()),
        });
    }
    decode_pgm(&bytes)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(image: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::dim(format!(
            "resize target {out_w}x{out_h} has a zero dimension"
        )));
    }
    if out_w == image.width && out_h == image.height {
        return Ok(image.clone());
    }
    let sx = image.width as f64 / out_w as f64;
    let sy = image.height as f64 / out_h as f64;
    let max_x = (image.width - 1) as f64;
    let max_y = (image.height - 1) as f64;
    let mut px = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(image.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(image.width - 1);
            let tx = fx - x0 as f64;
            let top = image.get(x0, y0) * (1.0 - tx) + image.get(x1, y0) * tx;
            let bot = image.get(x0, y1) * (1.0 - tx) + image.get(x1, y1) * tx;
            px.push(top * (1.0 - ty) + bot * ty);
        }
    }
    GrayImage::new(out_w, out_h, px)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_eight_bit() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 128, 64]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn decode_sixteen_bit_full_scale() {
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend([0xff, 0xff]);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels(), &[1.0]);
    }

    #[test]
    fn maxval_zero_is_format_error() {
        let bytes = b"P5 1 1 0\n\x00".to_vec();
        assert!(matches!(decode_pgm(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = b"P5 2 2 255\n\x00\x01".to_vec();
        match decode_pgm(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode_pgm(b"P6 1 1 255\n\x00"),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn pgm_round_trip_sixteen_bit() {
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 3 + y) as f64 / 20.0).unwrap();
        let back = decode_pgm(&img.to_pgm(true)).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 65535.0);
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::from_fn(6, 4, |x, y| (x + y) as f64 / 10.0).unwrap();
        assert_eq!(resize_bilinear(&img, 6, 4).unwrap(), img);
        let c = GrayImage::from_fn(5, 7, |_, _| 0.3).unwrap();
        let r = resize_bilinear(&c, 11, 3).unwrap();
        assert!(r.pixels().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(resize_bilinear(&c, 0, 3).is_err());
    }

    #[test]
    fn upsample_two_pixels_is_monotone() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&img, 4, 1).unwrap();
        // half-pixel centres map to source x = -0.25, 0.25, 0.75, 1.25
        assert_eq!(r.pixels(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn reflect_is_involution() {
        let img = GrayImage::from_fn(5, 2, |x, y| (x * 2 + y) as f64 / 10.0).unwrap();
        assert_ne!(img.reflect_horizontal(), img);
        assert_eq!(img.reflect_horizontal().reflect_horizontal(), img);
    }
}
