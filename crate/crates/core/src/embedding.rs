//! Clip-level embeddings: storage and two-stage normalization.
//!
//! Normalization first standardizes each dimension with statistics fitted on
//! training vectors only, then rescales every vector to unit l2 norm.
//!
//! On disk (`AEMB`, little-endian):
//!
//! | bytes | content |
//! | ----- | ------- |
//! | 4 | magic `AEMB` |
//! | 4 | u32 version = 1 |
//! | 4 | u32 dim |
//! | 8 | u64 count |
//! | count × dim × 4 | f32 values, one vector per row |
//! | variable | UTF-8 JSON trailer `{"clip_ids": [...], "source_tags": [...]}` |
//! | 8 | u64 byte offset of the trailer |
//!
//! Vectors are held as `f64` in memory and stored as `f32`, so a set
//! round-trips bit-exactly whenever its values are representable in `f32`
//! (in particular any set that was itself read from disk).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_io::Cursor;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"AEMB";
pub const EMBEDDING_VERSION: u32 = 1;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub clip_id: String,
    /// Where the vector came from, e.g. an encoder name and pooling mode.
    pub source_tag: String,
}

impl Embedding {
    pub fn new(clip_id: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            vector,
            clip_id: clip_id.into(),
            source_tag: String::new(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// An ordered collection of equal-length embeddings with unique clip ids.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSet {
    dim: usize,
    items: Vec<Embedding>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.items == other.items
    }
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn from_items(dim: usize, items: impl IntoIterator<Item = Embedding>) -> Result<Self> {
        let mut set = Self::new(dim);
        for item in items {
            set.push(item)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, item: Embedding) -> Result<()> {
        if item.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: item.dim(),
            });
        }
        if let Some(pos) = item.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::DomainError(format!(
                "`{}` has a non-finite component at {pos}",
                item.clip_id
            )));
        }
        if self.index.contains_key(&item.clip_id) {
            return Err(Error::FormatError(format!("duplicate clip id `{}`", item.clip_id)));
        }
        self.index.insert(item.clip_id.clone(), self.items.len());
        self.items.push(item);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Embedding] {
        &self.items
    }

    pub fn get(&self, clip_id: &str) -> Option<&Embedding> {
        self.index.get(clip_id).map(|&i| &self.items[i])
    }

    pub fn clip_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|e| e.clip_id.as_str())
    }

    /// New set holding the named clips, in the given order.
    pub fn select<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut out = Self::new(self.dim);
        for id in ids {
            let item = self
                .get(id)
                .ok_or_else(|| Error::ManifestError(format!("no embedding for clip `{id}`")))?;
            out.push(item.clone())?;
        }
        Ok(out)
    }
}

/// Per-dimension population statistics of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, clamped below at `epsilon`.
    pub std: Vec<f64>,
    pub epsilon: f64,
    pub fitted_on: usize,
}

/// A normalized embedding. `degenerate` marks vectors whose standardized form
/// was identically zero; they are returned as the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub embedding: Embedding,
    pub degenerate: bool,
}

pub fn fit_normalizer(train: &EmbeddingSet, epsilon: f64) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::EmptyInput("cannot fit a normalizer on an empty set".into()));
    }
    let n = train.len() as f64;
    let dim = train.dim();
    let mut mean = vec![0.0; dim];
    for e in train.items() {
        for (m, v) in mean.iter_mut().zip(&e.vector) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut var = vec![0.0; dim];
    for e in train.items() {
        for ((s, v), m) in var.iter_mut().zip(&e.vector).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt().max(epsilon)).collect();
    Ok(NormalizationStats {
        mean,
        std,
        epsilon,
        fitted_on: train.len(),
    })
}

impl NormalizationStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The standardized vector `(e - mean) / std`, before l2 scaling.
    pub fn standardize(&self, e: &Embedding) -> Result<Vec<f64>> {
        if e.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: e.dim(),
            });
        }
        Ok(e.vector
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn normalize_set(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        let items = set
            .items()
            .iter()
            .map(|e| normalize(self, e).map(|n| n.embedding))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::from_items(set.dim(), items)
    }
}

pub fn normalize(stats: &NormalizationStats, e: &Embedding) -> Result<Normalized> {
    let (vector, degenerate) = l2_normalize(stats.standardize(e)?);
    Ok(Normalized {
        embedding: Embedding {
            vector,
            clip_id: e.clip_id.clone(),
            source_tag: e.source_tag.clone(),
        },
        degenerate,
    })
}

/// Scales `v` to unit norm; a zero vector stays zero and is flagged.
pub fn l2_normalize(mut v: Vec<f64>) -> (Vec<f64>, bool) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (v, true);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    (v, false)
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    clip_ids: Vec<String>,
    source_tags: Vec<String>,
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + set.len() * set.dim() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for e in set.items() {
        for &v in &e.vector {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let trailer_offset = out.len() as u64;
    let trailer = Trailer {
        clip_ids: set.clip_ids().map(str::to_owned).collect(),
        source_tags: set.items().iter().map(|e| e.source_tag.clone()).collect(),
    };
    serde_json::to_writer(&mut out, &trailer)?;
    out.extend_from_slice(&trailer_offset.to_le_bytes());
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut cur = Cursor::new(bytes);
    cur.expect_magic(EMBEDDING_MAGIC)?;
    cur.expect_version(EMBEDDING_VERSION)?;
    let dim = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    let payload_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::TruncatedFile(format!("{count} × {dim} vectors cannot fit")))?;
    let payload_start = cur.position();
    // payload plus the trailing offset must fit
    if payload_len.saturating_add(8) > cur.remaining() {
        return Err(Error::TruncatedFile(format!(
            "header declares {count} × {dim} values but only {} bytes follow",
            cur.remaining()
        )));
    }

    let mut tail = Cursor::new(bytes);
    tail.seek(bytes.len() - 8)?;
    let trailer_offset = tail.u64()? as usize;
    if trailer_offset != payload_start + payload_len || trailer_offset > bytes.len() - 8 {
        return Err(Error::FormatError(format!(
            "trailer offset {trailer_offset} does not follow the payload"
        )));
    }
    let trailer: Trailer = serde_json::from_slice(&bytes[trailer_offset..bytes.len() - 8])
        .map_err(|e| Error::FormatError(format!("bad trailer: {e}")))?;
    if trailer.clip_ids.len() != count || trailer.source_tags.len() != count {
        return Err(Error::FormatError(format!(
            "trailer names {} clips, header declares {count}",
            trailer.clip_ids.len()
        )));
    }

    let payload = cur.take(payload_len)?;
    let mut set = EmbeddingSet::new(dim);
    let rows: Box<dyn Iterator<Item = &[u8]>> = if dim == 0 {
        Box::new(std::iter::repeat_n(&payload[..0], count))
    } else {
        Box::new(payload.chunks_exact(dim * 4))
    };
    for ((row, clip_id), source_tag) in rows.zip(trailer.clip_ids).zip(trailer.source_tags) {
        let vector = row
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        set.push(Embedding {
            vector,
            clip_id,
            source_tag,
        })?;
    }
    Ok(set)
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    fs::write(path, encode_embeddings(set)?)?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    decode_embeddings(&fs::read(path)?)
}
