//! Dense sentence vectors read from `EMB1` files, and cosine similarity.
//!
//! `EMB1` layout, little-endian:
//!
//! ```text
//! b"EMB1" | u32 count | u32 dim | count × (u16 id_len | id bytes | dim × f32)
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: IndexMap<String, Vec<f32>>,
    /// Free-form description of the producing encoder.
    pub provenance: String,
}

impl EmbeddingStore {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmbeddingFormat("dim must be at least 1".into()));
        }
        Ok(Self {
            dim,
            vectors: IndexMap::new(),
            provenance: provenance.into(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::EmbeddingFormat(format!(
                "vector `{id}` has length {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::EmbeddingFormat(format!(
                "vector `{id}` has a non-finite component"
            )));
        }
        if id.len() > usize::from(u16::MAX) {
            return Err(Error::EmbeddingFormat(format!("id `{id}` is too long")));
        }
        if self.vectors.contains_key(&id) {
            return Err(Error::DuplicateId {
                kind: "embedding",
                id,
            });
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    /// Entries in file order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    fn lookup(&self, role: &'static str, id: &str) -> Result<&[f32]> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding {
            store: self.provenance.clone(),
            role,
            id: id.to_owned(),
        })
    }

    /// Cosine between the stored query and passage vectors.
    pub fn pair_similarity(&self, query_id: &str, passage_id: &str) -> Result<f64> {
        let q = self.lookup("query", query_id)?;
        let p = self.lookup("passage", passage_id)?;
        Ok(cosine(q, p))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * (2 + 8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, v) in &self.vectors {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], provenance: impl Into<String>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::EmbeddingFormat("bad magic, expected EMB1".into()));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut store = Self::new(dim, provenance)?;
        for i in 0..count {
            let id_len = usize::from(r.u16()?);
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| Error::EmbeddingFormat(format!("record {i}: id is not UTF-8")))?
                .to_owned();
            let raw = r.take(4 * dim)?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(pos) = vector.iter().position(|v| v.is_nan()) {
                return Err(Error::EmbeddingFormat(format!(
                    "vector `{id}` has NaN at component {pos}"
                )));
            }
            store.insert(id, vector)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::EmbeddingFormat(format!(
                "size mismatch: header declares {count} records of dim {dim} but {} trailing bytes remain",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::EmbeddingFormat(format!(
                "size mismatch: payload truncated at byte {} (needed {n} more)",
                self.pos
            ))),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads an `EMB1` file. The provenance tag is read from a sidecar
/// `<path>.meta.json` (`{"provenance": "..."}`) when present, otherwise it
/// is the file stem.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    let provenance = fs::read_to_string(&meta)
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v.get("provenance")?.as_str().map(str::to_owned))
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
    EmbeddingStore::from_bytes(&bytes, provenance)
}

pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Cosine similarity accumulated in f64 and clamped to [-1, 1].
///
/// A zero vector has no direction; the similarity is then 0 and a warning
/// is logged.
pub fn cosine(u: &[f32], v: &[f32]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        warn!("cosine similarity with a zero vector, returning 0");
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// Standard-normal random vectors for `ids`, seeded. Used for fixtures.
pub fn random_store<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = EmbeddingStore::new(dim, format!("random-normal seed={seed}"))?;
    for id in ids {
        let v = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        store.insert(id, v)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_by_four() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(4, "test").unwrap();
        s.insert("q1", vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        s.insert("p1", vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        s
    }

    #[test]
    fn round_trips_two_vectors() {
        let s = two_by_four();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"EMB1");
        let back = EmbeddingStore::from_bytes(&bytes, "test").unwrap();
        assert_eq!(back.dim(), 4);
        assert_eq!(back.len(), 2);
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let bytes = two_by_four().to_bytes();
        let err = EmbeddingStore::from_bytes(&bytes[..bytes.len() - 3], "t").unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
        let mut extra = bytes.clone();
        extra.push(0);
        let err = EmbeddingStore::from_bytes(&extra, "t").unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
    }

    #[test]
    fn nan_vector_names_id() {
        let mut bytes = two_by_four().to_bytes();
        // Second record: 12 header + (2 + 2 + 16) first record + 2 + 2 id bytes.
        let off = 12 + 20 + 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = EmbeddingStore::from_bytes(&bytes, "t").unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut s = EmbeddingStore::new(1, "t").unwrap();
        s.insert("a", vec![1.0]).unwrap();
        assert!(matches!(s.insert("a", vec![2.0]), Err(Error::DuplicateId { .. })));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        // 32 / sqrt(14 * 77)
        assert_abs_diff_eq!(cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), 0.974631846, epsilon = 1e-9);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn pair_similarity_by_id() {
        let mut s = EmbeddingStore::new(3, "t").unwrap();
        s.insert("q", vec![1.0, 2.0, 3.0]).unwrap();
        s.insert("p", vec![4.0, 5.0, 6.0]).unwrap();
        s.insert("o", vec![-2.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.pair_similarity("q", "p").unwrap(), 0.974631846, epsilon = 1e-9);
        assert_eq!(s.pair_similarity("q", "o").unwrap(), 0.0);
        assert_eq!(s.pair_similarity("q", "q").unwrap(), 1.0);
        let err = s.pair_similarity("q", "zz").unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding { role: "passage", .. }));
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.emb");
        let s = random_store(["a", "b", "c"], 5, 3).unwrap();
        write_embeddings(&s, &path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap().provenance, "u");
        fs::write(dir.path().join("u.emb.meta.json"), r#"{"provenance":"use-v4 mean"}"#).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back.provenance, "use-v4 mean");
        assert_eq!(fs::read(&path).unwrap(), back.to_bytes());
    }
}
