//! Single-file model artifact: `NVF1`, a little-endian `u64` header length,
//! a JSON header (config, feature stats, tensor index) and the raw
//! little-endian `f64` payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{NvFormerConfig, NvFormerModel};
use crate::data::FeatureStats;
use crate::error::{NpcError, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"NVF1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: NvFormerConfig,
    stats: FeatureStats,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the payload, in `f64` elements.
    offset: usize,
}

pub fn to_bytes(model: &NvFormerModel) -> Result<Vec<u8>> {
    let params = model.params();
    let mut offset = 0;
    let tensors = params
        .names()
        .iter()
        .zip(params.values())
        .map(|(name, m)| {
            let e = TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                offset,
            };
            offset += m.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        version: FORMAT_VERSION,
        config: model.config().clone(),
        stats: model.stats().clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for m in params.values() {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<NvFormerModel> {
    let err = |msg: String| NpcError::Artifact(msg);
    if bytes.len() < 12 {
        return Err(err(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(format!("bad magic {:?}", &bytes[..4])));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let payload_start = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[12..payload_start])
        .map_err(|e| err(format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(err(format!(
            "version {} not supported (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let payload = &bytes[payload_start..];
    if !payload.len().is_multiple_of(8) {
        return Err(err("payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0;
    for t in header.tensors {
        let n = t.rows * t.cols;
        if t.offset != expected_offset {
            return Err(err(format!("tensor {} offset {} out of order", t.name, t.offset)));
        }
        let end = t.offset + n;
        if end > values.len() {
            return Err(err(format!("truncated payload in tensor {}", t.name)));
        }
        tensors.push((t.name, Matrix::from_vec(t.rows, t.cols, values[t.offset..end].to_vec())));
        expected_offset = end;
    }
    if expected_offset != values.len() {
        return Err(err(format!(
            "{} trailing payload values",
            values.len() - expected_offset
        )));
    }
    NvFormerModel::from_params(header.config, header.stats, tensors)
}

pub fn save(model: &NvFormerModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| NpcError::io(path, e))
}

pub fn load(path: &Path) -> Result<NvFormerModel> {
    let bytes = std::fs::read(path).map_err(|e| NpcError::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> NvFormerModel {
        let cfg = NvFormerConfig {
            d_model: 8,
            heads: 2,
            n_s: 1,
            n_i: 1,
            l_h: 4,
            l_f: 3,
            p: 2,
            ..NvFormerConfig::default()
        };
        let mut stats = FeatureStats::identity();
        stats.min[0] = 0.1 + 0.2;
        stats.max[0] = 25.0 / 3.0;
        NvFormerModel::new(cfg, stats, 77).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(NpcError::Artifact(_))));
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(from_bytes(&bytes[..20]).is_err());
        let mut versioned = bytes.clone();
        let at = versioned
            .windows(11)
            .position(|w| w == b"\"version\":1")
            .unwrap();
        versioned[at + 10] = b'9';
        let e = from_bytes(&versioned).unwrap_err().to_string();
        assert!(e.contains("version 9"), "{e}");
    }
}
