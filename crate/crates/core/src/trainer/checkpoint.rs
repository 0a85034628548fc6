//! Model checkpoint: `b"WRCK"`, u32 header length, JSON header, then the
//! flattened weights as little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{FeatureSchema, Standardizer};
use super::mlp::ScorerParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WRCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub feature_schema: FeatureSchema,
    pub standardization: Standardizer,
    pub margin: f64,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ScorerParams,
}

impl Checkpoint {
    pub fn new(
        params: ScorerParams,
        feature_schema: FeatureSchema,
        standardization: Standardizer,
        margin: f64,
        provenance: serde_json::Value,
    ) -> Result<Self> {
        if feature_schema.dim() != params.input_dim() {
            return Err(Error::Shape(format!(
                "feature schema has dim {}, scorer input is {}",
                feature_schema.dim(),
                params.input_dim()
            )));
        }
        Ok(Self {
            header: CheckpointHeader {
                version: VERSION,
                layer_sizes: params.sizes(),
                feature_schema,
                standardization,
                margin,
                provenance,
            },
            params,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let weights = self.params.flatten();
        let mut out = Vec::with_capacity(8 + header.len() + 8 * weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for w in weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header_end = 8usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[8..header_end]).map_err(|e| bad(&e.to_string()))?;
        if header.version != VERSION {
            return Err(bad(&format!("unsupported version {}", header.version)));
        }
        let payload = &bytes[header_end..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = ScorerParams::unflatten(&header.layer_sizes, &values)?;
        if header.feature_schema.dim() != params.input_dim() {
            return Err(bad("feature schema does not match layer sizes"));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::ScoreSource;
    use crate::trainer::LabelingFunctionSpec;

    fn sample() -> Checkpoint {
        let schema = FeatureSchema {
            embedding_store: None,
            embedding_dim: 0,
            scalars: vec![
                LabelingFunctionSpec {
                    name: "bm25".into(),
                    source: ScoreSource::Bm25,
                },
                LabelingFunctionSpec {
                    name: "u".into(),
                    source: ScoreSource::Embedding("u".into()),
                },
            ],
        };
        let params = ScorerParams::init(2, &[3, 2], 1.0, 11).unwrap();
        Checkpoint::new(
            params,
            schema,
            Standardizer {
                mean: vec![1.5, 0.1],
                std: vec![0.5, 0.2],
            },
            1.0,
            serde_json::json!({"seed": 11}),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_truncation() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"XXXX").is_err());
    }
}
