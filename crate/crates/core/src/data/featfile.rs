//! Binary feature files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DBFS"
//! 4       4     u32 version (1)
//! 8       4     u32 n (rows)
//! 12      4     u32 d (columns)
//! 16      ...   n records of: i32 label, d x f32 values
//! ```
//!
//! Total length is exactly `16 + n * (4 + 4 d)` bytes. A CSV file with a
//! `label,f0,f1,...` header is accepted on read as a fallback.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::FeatureMatrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"DBFS";
pub const FEATURE_VERSION: u32 = 1;

pub fn encode_features(x: &FeatureMatrix) -> Result<Vec<u8>> {
    let (n, d) = (x.n(), x.dim());
    let mut out = Vec::with_capacity(16 + n * (4 + 4 * d));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for (row, &label) in x.rows().zip(x.labels()) {
        let label = i32::try_from(label).map_err(|_| Error::data(format!("label {label} exceeds i32")))?;
        out.extend_from_slice(&label.to_le_bytes());
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_features(bytes: &[u8], tag: &str) -> Result<FeatureMatrix> {
    if bytes.len() < 16 {
        return Err(Error::Corruption(format!(
            "feature file header needs 16 bytes, have {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing DBFS magic".into(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let n = u32_at(bytes, 8) as usize;
    let d = u32_at(bytes, 12) as usize;
    let expected = (n as u128) * (4 + 4 * d as u128) + 16;
    if expected != bytes.len() as u128 {
        return Err(Error::Corruption(format!(
            "header declares {n}x{d} ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * d);
    let mut at = 16;
    for r in 0..n {
        let label = i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if label < 0 {
            return Err(Error::Format {
                offset: at,
                message: format!("negative label {label} in row {r}"),
            });
        }
        labels.push(label as usize);
        at += 4;
        for _ in 0..d {
            values.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64);
            at += 4;
        }
    }
    FeatureMatrix::new(n, d, values, labels, tag)
}

fn decode_csv(text: &str, tag: &str) -> Result<FeatureMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::data("empty CSV feature file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") {
        return Err(Error::Format {
            offset: 0,
            message: "CSV feature header must start with 'label'".into(),
        });
    }
    let d = cols.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::Corruption(format!(
                "CSV row {} has {} fields, header has {}",
                ln + 1,
                fields.len(),
                d + 1
            )));
        }
        let parse_err = |f: &str| Error::data(format!("CSV row {}: cannot parse '{f}'", ln + 1));
        labels.push(fields[0].parse::<usize>().map_err(|_| parse_err(fields[0]))?);
        for f in &fields[1..] {
            values.push(f.parse::<f64>().map_err(|_| parse_err(f))?);
        }
    }
    FeatureMatrix::new(labels.len(), d, values, labels, tag)
}

pub fn write_feature_file(x: &FeatureMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, encode_features(x)?).map_err(|e| Error::io(path, e))
}

/// Read a DBFS binary file, or a CSV file when the DBFS magic is absent.
pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if bytes.starts_with(FEATURE_MAGIC) || !bytes.starts_with(b"label") {
        decode_features(&bytes, &tag)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format {
            offset: e.valid_up_to(),
            message: "CSV feature file is not UTF-8".into(),
        })?;
        decode_csv(text, &tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_single_row() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DBFS");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-1.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 28);
        let x = decode_features(&bytes, "hand").unwrap();
        assert_eq!(x.labels(), &[1]);
        assert_eq!(x.values(), &[0.5, -1.0]);
        assert_eq!(encode_features(&x).unwrap(), bytes);
    }

    #[test]
    fn size_disagreement_is_corruption() {
        let x = FeatureMatrix::new(2, 3, vec![0.25; 6], vec![0, 1], "t").unwrap();
        let mut bytes = encode_features(&x).unwrap();
        bytes[12] = 4;
        assert!(matches!(decode_features(&bytes, "t"), Err(Error::Corruption(_))));
        let bytes = encode_features(&x).unwrap();
        assert!(matches!(
            decode_features(&bytes[..bytes.len() - 1], "t"),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn wrong_magic_and_version() {
        let x = FeatureMatrix::new(1, 1, vec![1.0], vec![0], "t").unwrap();
        let mut bytes = encode_features(&x).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_features(&bytes, "t"),
            Err(Error::Version { found: 2, expected: 1 })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes, "t"), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_fallback() {
        let x = decode_csv("label,f0,f1\n0,1.5,2\n2,-3,4e-1\n", "c").unwrap();
        assert_eq!(x.labels(), &[0, 2]);
        assert_eq!(x.values(), &[1.5, 2.0, -3.0, 0.4]);
    }
}
