//! Exact cosine top-K search over an in-memory matrix, with a checksummed
//! on-disk format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "MRIX1" | dim: u32 | rows: u64 | normalized: u8
//! | encoder_name: u32 len + UTF-8 | strategy_tag: u32 len + UTF-8
//! | rows × (id: u32 len + UTF-8)
//! | rows × dim × f32
//! | crc32 of everything above: u32
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EmbeddingVector;
use crate::fsutil;
use crate::fusion::{self, FusionError, ZERO_NORM};

const MAGIC: &[u8; 5] = b"MRIX1";

/// Rows per parallel scoring task.
const PAR_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate chunk id `{0}`")]
    DuplicateId(String),
    #[error("row `{0}` has zero norm")]
    ZeroVector(String),
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("cannot build an index from no entries")]
    Empty,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("i/o error on {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index file {} is corrupt: {reason}", path.display())]
    CorruptIndex { path: PathBuf, reason: String },
}

/// One ranked hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    ids: Vec<String>,
    rows: Vec<f32>,
    norms: Vec<f64>,
    dim: usize,
    normalized: bool,
    encoder_name: String,
    strategy_tag: String,
}

/// Builds an index with empty encoder/strategy labels.
pub fn build_index(entries: Vec<(String, EmbeddingVector)>, normalize: bool) -> Result<VectorIndex, IndexError> {
    VectorIndex::build(entries, normalize, "", "")
}

impl VectorIndex {
    /// Stores rows in input order, L2-normalizing each one when `normalize` is set.
    pub fn build(
        entries: Vec<(String, EmbeddingVector)>,
        normalize: bool,
        encoder_name: &str,
        strategy_tag: &str,
    ) -> Result<Self, IndexError> {
        let dim = entries.first().ok_or(IndexError::Empty)?.1.dim();
        let mut seen = HashSet::with_capacity(entries.len());
        let mut ids = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len() * dim);
        for (id, vector) in entries {
            if vector.dim() != dim {
                return Err(IndexError::DimMismatch {
                    expected: dim,
                    got: vector.dim(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(IndexError::DuplicateId(id));
            }
            let vector = if normalize {
                fusion::l2_normalize(&vector).map_err(|_| IndexError::ZeroVector(id.clone()))?
            } else {
                vector
            };
            rows.extend(vector.to_f32());
            ids.push(id);
        }
        Ok(Self::from_parts(
            ids,
            rows,
            dim,
            normalize,
            encoder_name.to_string(),
            strategy_tag.to_string(),
        ))
    }

    fn from_parts(
        ids: Vec<String>,
        rows: Vec<f32>,
        dim: usize,
        normalized: bool,
        encoder_name: String,
        strategy_tag: String,
    ) -> Self {
        let norms = rows
            .chunks_exact(dim)
            .map(|r| r.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt())
            .collect();
        Self {
            ids,
            rows,
            norms,
            dim,
            normalized,
            encoder_name,
            strategy_tag,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Marks rows that were unit-norm before conversion as normalized.
    pub(crate) fn assume_normalized(mut self) -> Self {
        debug_assert!(self.norms.iter().all(|n| (n - 1.0).abs() < 1e-5));
        self.normalized = true;
        self
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn strategy_tag(&self) -> &str {
        &self.strategy_tag
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of `query` against every row, in row order. Zero rows score 0.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let q = fusion::l2_normalize(query).map_err(|e| match e {
            FusionError::ZeroVector => IndexError::ZeroQuery,
            other => unreachable!("normalize cannot fail with {other}"),
        })?;
        let q = q.values();
        let score_row = |(row, &n): (&[f32], &f64)| -> f64 {
            if n < ZERO_NORM {
                return 0.0;
            }
            let d: f64 = row.iter().zip(q).map(|(&r, &x)| f64::from(r) * x).sum();
            (d / n).clamp(-1.0, 1.0)
        };
        let out = if self.len() > PAR_CHUNK {
            self.rows
                .par_chunks(self.dim)
                .zip(self.norms.par_iter())
                .with_min_len(PAR_CHUNK)
                .map(score_row)
                .collect()
        } else {
            self.rows
                .chunks_exact(self.dim)
                .zip(&self.norms)
                .map(score_row)
                .collect()
        };
        Ok(out)
    }

    /// Top `min(k, N)` rows by descending cosine, ties broken by ascending id.
    pub fn topk(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredChunk>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let scores = self.scores(query)?;
        Ok(rank_rows(&self.ids, &scores, k)
            .into_iter()
            .map(|(i, score)| ScoredChunk {
                chunk_id: self.ids[i].clone(),
                score,
            })
            .collect())
    }

    /// Every row, ranked.
    pub fn full_ranking(&self, query: &EmbeddingVector) -> Result<Vec<ScoredChunk>, IndexError> {
        self.topk(query, self.len())
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut buf = Vec::with_capacity(64 + self.rows.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.push(u8::from(self.normalized));
        put_str(&mut buf, &self.encoder_name);
        put_str(&mut buf, &self.strategy_tag);
        for id in &self.ids {
            put_str(&mut buf, id);
        }
        for v in &self.rows {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        fsutil::write_atomic(path, &buf).map_err(|source| IndexError::IoFailure {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(|source| IndexError::IoFailure {
            path: path.to_path_buf(),
            source,
        })?;
        let corrupt = |reason: &str| IndexError::CorruptIndex {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < MAGIC.len() + 4 || !bytes.starts_with(MAGIC) {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader {
            bytes: &body[MAGIC.len()..],
        };
        let parsed = (|| {
            let dim = r.u32()? as usize;
            let n = usize::try_from(r.u64()?).ok()?;
            let normalized = match r.take(1)?[0] {
                0 => false,
                1 => true,
                _ => return None,
            };
            let encoder_name = r.string()?;
            let strategy_tag = r.string()?;
            let ids = (0..n).map(|_| r.string()).collect::<Option<Vec<_>>>()?;
            let raw = r.take(n.checked_mul(dim)?.checked_mul(4)?)?;
            if !r.bytes.is_empty() || dim == 0 {
                return None;
            }
            let rows = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            Some((dim, normalized, encoder_name, strategy_tag, ids, rows))
        })();
        let (dim, normalized, encoder_name, strategy_tag, ids, rows) =
            parsed.ok_or_else(|| corrupt("truncated or malformed body"))?;
        Ok(Self::from_parts(ids, rows, dim, normalized, encoder_name, strategy_tag))
    }
}

/// Ranks positions by descending score then ascending id, keeping `k`.
pub(crate) fn rank_rows(ids: &[String], scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let cmp = |a: &usize, b: &usize| -> Ordering {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[*a].cmp(&ids[*b]))
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let k = k.min(order.len());
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    order.into_iter().map(|i| (i, scores[i])).collect()
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.bytes.len() < n {
            return None;
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Some(head)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn string(&mut self) -> Option<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).ok()
    }
}
