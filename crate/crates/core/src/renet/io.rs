//! BRNR model files.
//!
//! ```text
//! offset  field
//! 0       magic "BRNR"
//! 4       u32 version (1)
//! 8       u64 init seed
//! 16      u32 config length L
//! 20      L bytes of config JSON
//! 20+L    u64 parameter count P
//! 28+L    P x f32 parameters
//! ```
//!
//! Parameters are stored block by block (filters `[Co, Ci, r, s]`, conv bias,
//! gamma, beta, running mean, running variance), then fc1 weights
//! `[fc1, F]`, fc1 bias, fc2 weights `[K, fc1]`, fc2 bias. All integers and
//! floats are little-endian. Loading widens the f32 values to f64, so a
//! load -> save cycle reproduces the file byte for byte.

use std::path::Path;

use super::{build_model_any_depth, BrainReNetConfig, BrainReNetModel};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"BRNR";
pub const MODEL_VERSION: u32 = 1;

fn param_slices(model: &BrainReNetModel) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::new();
    for b in &model.blocks {
        out.extend([
            b.filters.data(),
            b.bias.as_slice(),
            &b.bn.gamma,
            &b.bn.beta,
            &b.bn.running_mean,
            &b.bn.running_var,
        ]);
    }
    out.extend([
        model.fc1.weights.as_slice(),
        &model.fc1.bias,
        &model.fc2.weights,
        &model.fc2.bias,
    ]);
    out
}

fn param_slices_mut(model: &mut BrainReNetModel) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for b in &mut model.blocks {
        out.push(b.filters.data_mut());
        out.push(&mut b.bias);
        out.push(&mut b.bn.gamma);
        out.push(&mut b.bn.beta);
        out.push(&mut b.bn.running_mean);
        out.push(&mut b.bn.running_var);
    }
    out.push(&mut model.fc1.weights);
    out.push(&mut model.fc1.bias);
    out.push(&mut model.fc2.weights);
    out.push(&mut model.fc2.bias);
    out
}

pub fn encode_model(model: &BrainReNetModel) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.config)?;
    let params = param_slices(model);
    let count: usize = params.iter().map(|p| p.len()).sum();
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u64(model.seed);
    w.u32(config.len() as u32);
    w.bytes(&config);
    w.u64(count as u64);
    for p in params {
        p.iter().for_each(|&v| w.f32(v as f32));
    }
    Ok(w.buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<BrainReNetModel> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing BRNR magic".into(),
        });
    }
    let mut r = Reader::new(bytes);
    r.take(4)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let seed = r.u64()?;
    let len = r.u32()? as usize;
    let at = r.pos;
    let config: BrainReNetConfig = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format {
        offset: at,
        message: format!("bad config block: {e}"),
    })?;
    config.validate_any_depth()?;
    let expected = config.param_count()?;
    let count = r.usize()?;
    if count != expected {
        return Err(Error::Corruption(format!(
            "header declares {count} parameters, config implies {expected}"
        )));
    }
    let mut model = build_model_any_depth(&config, seed)?;
    for p in param_slices_mut(&mut model) {
        for v in p.iter_mut() {
            *v = r.f32()? as f64;
        }
    }
    r.finish()?;
    Ok(model)
}

pub fn save_model(model: &BrainReNetModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<BrainReNetModel> {
    decode_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renet::build_model;

    #[test]
    fn round_trip_is_byte_exact() {
        let m = build_model(&BrainReNetConfig::with_classes(3), 11).unwrap();
        let bytes = encode_model(&m).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back).unwrap(), bytes);
        assert_eq!(decode_model(&encode_model(&back).unwrap()).unwrap(), back);
    }

    #[test]
    fn header_errors() {
        let m = build_model(&BrainReNetConfig::default(), 0).unwrap();
        let bytes = encode_model(&m).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        let err = decode_model(&bad).unwrap_err();
        assert!(matches!(err, Error::Version { found: 2, expected: 1 }));
        assert!(err.to_string().contains('2') && err.to_string().contains('1'));
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 3]),
            Err(Error::Corruption(_))
        ));
    }
}
