//! SVFF v1 feature files.
//!
//! Little-endian, no padding:
//!
//! ```text
//! offset 0   "SVFF"
//! offset 4   u32 version (1)
//! offset 8   u32 n_samples
//! offset 12  u32 dim
//! offset 16  u32 n_classes
//! offset 20  n_samples × { u32 label, dim × f32 feature }
//! ```

use std::io::Write;
use std::path::Path;

use super::Sample;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SVFF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub dim: usize,
    pub n_classes: usize,
    pub samples: Vec<Sample>,
}

impl FeatureSet {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Decodes an SVFF buffer, validating the header against the payload.
pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing SVFF magic".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corruption {
            offset: bytes.len() as u64,
            message: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n_samples = u32_at(bytes, 8) as u64;
    let dim = u32_at(bytes, 12) as u64;
    let n_classes = u32_at(bytes, 16) as usize;
    if dim == 0 && n_samples > 0 {
        return Err(Error::Format {
            offset: 12,
            message: "zero feature dimension".into(),
        });
    }

    let record = 4 + 4 * dim;
    let payload = bytes.len() as u64 - HEADER_LEN as u64;
    // u32 × (4 + 4·u32) can exceed u64.
    let expected = n_samples as u128 * record as u128;
    if (payload as u128) < expected {
        let complete = payload / record;
        return Err(Error::Corruption {
            offset: HEADER_LEN as u64 + complete * record,
            message: format!(
                "header declares {n_samples} samples but payload holds {complete} complete records"
            ),
        });
    }
    let expected = expected as u64;
    if payload > expected {
        return Err(Error::Corruption {
            offset: HEADER_LEN as u64 + expected,
            message: format!(
                "{} trailing bytes after the last record",
                payload - expected
            ),
        });
    }

    let dim = dim as usize;
    let mut samples = Vec::with_capacity(n_samples as usize);
    let mut pos = HEADER_LEN;
    for _ in 0..n_samples {
        let label = u32_at(bytes, pos) as usize;
        if label >= n_classes {
            return Err(Error::Range(format!(
                "label {label} at byte {pos} is not below n_classes {n_classes}"
            )));
        }
        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let at = pos + 4 + 4 * j;
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: at as u64,
                    message: "non-finite feature value".into(),
                });
            }
            features.push(v as f64);
        }
        samples.push(Sample { features, label });
        pos += record as usize;
    }
    Ok(FeatureSet {
        dim,
        n_classes,
        samples,
    })
}

pub fn encode_features(set: &FeatureSet) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + set.samples.len() * (4 + 4 * set.dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(set.samples.len(), "sample count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(set.dim, "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(set.n_classes, "class count")?.to_le_bytes());
    for s in &set.samples {
        if s.label >= set.n_classes {
            return Err(Error::Range(format!(
                "label {} not below n_classes {}",
                s.label, set.n_classes
            )));
        }
        if s.features.len() != set.dim {
            return Err(Error::Shape(format!(
                "sample of dimension {} in a set of dimension {}",
                s.features.len(),
                set.dim
            )));
        }
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        for &v in &s.features {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn save_feature_file(path: impl AsRef<Path>, set: &FeatureSet) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(set)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
