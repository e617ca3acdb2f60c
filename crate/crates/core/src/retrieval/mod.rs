//! The six retrieval strategies: index construction per strategy and
//! query-time scoring.
//!
//! | strategy       | index rows                                            | query score |
//! |----------------|-------------------------------------------------------|-------------|
//! | `plain`        | `f(c)`                                                | cosine      |
//! | `mat_prefix`   | `f(s(m) \n c)`                                        | cosine      |
//! | `mat_suffix`   | `f(c \n s(m))`                                        | cosine      |
//! | `unified(α)`   | `normalize(α·f̂(c) + (1−α)·f̂(s(m)))`                  | cosine      |
//! | `late_fusion(α)` | `f(c)` and `f(s(m))` in two indices                 | `(1−α)·cos_text + α·cos_meta` |
//! | `reformulated(base)` | as `base`                                       | as `base`, on the rewritten query |
//!
//! The query is always embedded with the text encoder, including when it is
//! scored against the metadata index.

mod reformulate;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ablate_metadata, parse_mask, Corpus, CorpusError, FieldMask};
use crate::encoder::{EmbeddingVector, Encoder, EncoderError};
use crate::fusion::{self, build_mat_text, serialize_metadata, FusionError, FusionWeight, MatVariant};
use crate::index::{self, IndexError, ScoredChunk, VectorIndex};

pub use reformulate::{
    parse_alias_table, reformulate_query, IdentityReformulator, Reformulator, RemoteReformulator,
    RemoteReformulatorConfig, RuleBasedReformulator, SchemaHints,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("chunk `{0}` has no metadata left to encode for a dual-encoder strategy")]
    EmptyMetadata(String),
    #[error("strategy {0} needs encoded chunk text, not precomputed embeddings")]
    NeedsEncoder(String),
    #[error("alias table line {line}: {reason}")]
    AliasTable { line: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The non-reformulated strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseStrategy {
    Plain,
    MatPrefix,
    MatSuffix,
    Unified { alpha: FusionWeight },
    LateFusion { alpha: FusionWeight },
}

impl BaseStrategy {
    pub fn unified(alpha: f64) -> Result<Self, FusionError> {
        Ok(BaseStrategy::Unified {
            alpha: FusionWeight::new(alpha)?,
        })
    }

    pub fn late_fusion(alpha: f64) -> Result<Self, FusionError> {
        Ok(BaseStrategy::LateFusion {
            alpha: FusionWeight::new(alpha)?,
        })
    }

    /// Whether the strategy needs per-chunk metadata embeddings.
    pub fn uses_metadata_encoder(self) -> bool {
        matches!(self, BaseStrategy::Unified { .. } | BaseStrategy::LateFusion { .. })
    }
}

impl fmt::Display for BaseStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseStrategy::Plain => f.write_str("plain"),
            BaseStrategy::MatPrefix => f.write_str("mat_prefix"),
            BaseStrategy::MatSuffix => f.write_str("mat_suffix"),
            BaseStrategy::Unified { alpha } => write!(f, "unified({alpha})"),
            BaseStrategy::LateFusion { alpha } => write!(f, "late_fusion({alpha})"),
        }
    }
}

/// A strategy, optionally preceded by query reformulation. Reformulation
/// cannot nest because it only wraps a [`BaseStrategy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Base(BaseStrategy),
    Reformulated(BaseStrategy),
}

impl Variant {
    pub fn base(self) -> BaseStrategy {
        match self {
            Variant::Base(b) | Variant::Reformulated(b) => b,
        }
    }

    pub fn is_reformulated(self) -> bool {
        matches!(self, Variant::Reformulated(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StrategySpec", into = "StrategySpec")]
pub struct StrategyConfig {
    pub variant: Variant,
    /// Fields removed before serialization and metadata encoding.
    pub metadata_mask: FieldMask,
}

impl StrategyConfig {
    pub fn new(base: BaseStrategy) -> Self {
        Self {
            variant: Variant::Base(base),
            metadata_mask: FieldMask::new(),
        }
    }

    pub fn plain() -> Self {
        Self::new(BaseStrategy::Plain)
    }

    pub fn reformulated(base: BaseStrategy) -> Self {
        Self {
            variant: Variant::Reformulated(base),
            metadata_mask: FieldMask::new(),
        }
    }

    pub fn with_mask(mut self, mask: FieldMask) -> Self {
        self.metadata_mask = mask;
        self
    }

    pub fn base(&self) -> BaseStrategy {
        self.variant.base()
    }

    /// Stable textual tag, e.g. `reformulated(late_fusion(0.5))-section`.
    pub fn label(&self) -> String {
        let mut s = match self.variant {
            Variant::Base(b) => b.to_string(),
            Variant::Reformulated(b) => format!("reformulated({b})"),
        };
        for field in &self.metadata_mask {
            s.push('-');
            s.push_str(field.name());
        }
        s
    }
}

impl fmt::Display for StrategyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Config-file shape of a strategy: `{kind = "unified", alpha = 0.5, reformulate = true, mask = ["section"]}`.
#[derive(Serialize, Deserialize)]
struct StrategySpec {
    #[serde(flatten)]
    base: BaseStrategy,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    reformulate: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    mask: Vec<String>,
}

impl TryFrom<StrategySpec> for StrategyConfig {
    type Error = CorpusError;

    fn try_from(spec: StrategySpec) -> Result<Self, Self::Error> {
        Ok(Self {
            variant: if spec.reformulate {
                Variant::Reformulated(spec.base)
            } else {
                Variant::Base(spec.base)
            },
            metadata_mask: parse_mask(&spec.mask)?,
        })
    }
}

impl From<StrategyConfig> for StrategySpec {
    fn from(c: StrategyConfig) -> Self {
        StrategySpec {
            base: c.variant.base(),
            reformulate: c.variant.is_reformulated(),
            mask: c.metadata_mask.iter().map(|f| f.name().to_string()).collect(),
        }
    }
}

/// Per-chunk content embeddings and, optionally, metadata embeddings, in
/// corpus chunk order. Lets sweeps re-fuse without re-encoding.
#[derive(Debug, Clone)]
pub struct ChunkEmbeddings {
    pub chunk_ids: Vec<String>,
    pub text: Vec<EmbeddingVector>,
    pub meta: Option<Vec<EmbeddingVector>>,
    pub encoder_name: String,
}

impl ChunkEmbeddings {
    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }
}

/// Encodes every chunk's text.
pub fn encode_chunk_texts(
    corpus: &Corpus,
    encoder: &dyn Encoder,
    max_in_flight: usize,
) -> Result<Vec<EmbeddingVector>, RetrievalError> {
    let texts: Vec<String> = corpus.chunks().iter().map(|c| c.text.clone()).collect();
    Ok(encoder.encode_batch(&texts, max_in_flight)?)
}

/// Encodes every chunk's serialized (masked) metadata. Identical headers are
/// encoded once.
pub fn encode_chunk_metadata(
    corpus: &Corpus,
    encoder: &dyn Encoder,
    mask: &FieldMask,
    max_in_flight: usize,
) -> Result<Vec<EmbeddingVector>, RetrievalError> {
    let headers: Vec<String> = corpus
        .chunks()
        .iter()
        .map(|c| {
            let header = serialize_metadata(&ablate_metadata(&c.metadata, mask));
            if header.is_empty() {
                Err(RetrievalError::EmptyMetadata(c.chunk_id.clone()))
            } else {
                Ok(header)
            }
        })
        .collect::<Result<_, _>>()?;
    let mut unique: Vec<String> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let positions: Vec<usize> = headers
        .iter()
        .map(|h| {
            *slot.entry(h.as_str()).or_insert_with(|| {
                unique.push(h.clone());
                unique.len() - 1
            })
        })
        .collect();
    let vectors = encoder.encode_batch(&unique, max_in_flight)?;
    Ok(positions.into_iter().map(|i| vectors[i].clone()).collect())
}

/// Text embeddings plus masked metadata embeddings for every chunk.
pub fn embed_chunks(
    corpus: &Corpus,
    encoder: &dyn Encoder,
    mask: &FieldMask,
    with_metadata: bool,
    max_in_flight: usize,
) -> Result<ChunkEmbeddings, RetrievalError> {
    Ok(ChunkEmbeddings {
        chunk_ids: corpus.chunks().iter().map(|c| c.chunk_id.clone()).collect(),
        text: encode_chunk_texts(corpus, encoder, max_in_flight)?,
        meta: if with_metadata {
            Some(encode_chunk_metadata(corpus, encoder, mask, max_in_flight)?)
        } else {
            None
        },
        encoder_name: encoder.descriptor().name.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum BundleIndices {
    /// plain and metadata-as-text
    Single(VectorIndex),
    /// unified
    Fused(VectorIndex),
    /// late fusion; identical row order in both
    Dual { text: VectorIndex, meta: VectorIndex },
}

/// The index (or indices) serving one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexBundle {
    strategy: StrategyConfig,
    indices: BundleIndices,
}

impl IndexBundle {
    /// Assembles a bundle from precomputed embeddings. Metadata-as-text
    /// strategies need [`build_bundle`] because their rows embed new strings.
    pub fn from_embeddings(embeddings: &ChunkEmbeddings, strategy: StrategyConfig) -> Result<Self, RetrievalError> {
        let tag = strategy.label();
        let name = embeddings.encoder_name.as_str();
        let ids = &embeddings.chunk_ids;
        let zip = |vs: &[EmbeddingVector]| -> Vec<(String, EmbeddingVector)> {
            ids.iter().cloned().zip(vs.iter().cloned()).collect()
        };
        let meta = || {
            embeddings
                .meta
                .as_deref()
                .ok_or_else(|| RetrievalError::NeedsEncoder(format!("{tag} (metadata embeddings missing)")))
        };
        let indices = match strategy.base() {
            BaseStrategy::Plain => BundleIndices::Single(VectorIndex::build(zip(&embeddings.text), true, name, &tag)?),
            BaseStrategy::MatPrefix | BaseStrategy::MatSuffix => {
                return Err(RetrievalError::NeedsEncoder(tag));
            }
            BaseStrategy::Unified { alpha } => {
                let fused = embeddings
                    .text
                    .iter()
                    .zip(meta()?)
                    .map(|(t, m)| fusion::fuse_unified(t, m, alpha))
                    .collect::<Result<Vec<_>, _>>()?;
                // Rows are already unit-norm; renormalizing would perturb the
                // α = 1 and α = 0 endpoints.
                BundleIndices::Fused(VectorIndex::build(zip(&fused), false, name, &tag)?.assume_normalized())
            }
            BaseStrategy::LateFusion { .. } => BundleIndices::Dual {
                text: VectorIndex::build(zip(&embeddings.text), true, name, &format!("{tag}:text"))?,
                meta: VectorIndex::build(zip(meta()?), true, name, &format!("{tag}:meta"))?,
            },
        };
        Ok(Self { strategy, indices })
    }

    pub fn strategy(&self) -> &StrategyConfig {
        &self.strategy
    }

    /// Content index for plain, metadata-as-text and late-fusion bundles.
    pub fn text_index(&self) -> Option<&VectorIndex> {
        match &self.indices {
            BundleIndices::Single(i) | BundleIndices::Dual { text: i, .. } => Some(i),
            BundleIndices::Fused(_) => None,
        }
    }

    pub fn meta_index(&self) -> Option<&VectorIndex> {
        match &self.indices {
            BundleIndices::Dual { meta, .. } => Some(meta),
            _ => None,
        }
    }

    pub fn fused_index(&self) -> Option<&VectorIndex> {
        match &self.indices {
            BundleIndices::Fused(i) => Some(i),
            _ => None,
        }
    }

    /// Every index in the bundle with a role name (`single`, `fused`, `text`, `meta`).
    pub fn indices(&self) -> Vec<(&'static str, &VectorIndex)> {
        match &self.indices {
            BundleIndices::Single(i) => vec![("single", i)],
            BundleIndices::Fused(i) => vec![("fused", i)],
            BundleIndices::Dual { text, meta } => vec![("text", text), ("meta", meta)],
        }
    }

    fn primary(&self) -> &VectorIndex {
        match &self.indices {
            BundleIndices::Single(i) | BundleIndices::Fused(i) | BundleIndices::Dual { text: i, .. } => i,
        }
    }

    pub fn ids(&self) -> &[String] {
        self.primary().ids()
    }

    pub fn len(&self) -> usize {
        self.primary().len()
    }

    pub fn is_empty(&self) -> bool {
        self.primary().is_empty()
    }

    /// Strategy score of every row for an already-embedded query.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>, RetrievalError> {
        match &self.indices {
            BundleIndices::Single(i) | BundleIndices::Fused(i) => Ok(i.scores(query)?),
            BundleIndices::Dual { text, meta } => {
                let alpha = match self.strategy.base() {
                    BaseStrategy::LateFusion { alpha } => alpha.alpha(),
                    other => unreachable!("dual indices built for {other}"),
                };
                let ts = text.scores(query)?;
                let ms = meta.scores(query)?;
                Ok(ts
                    .into_iter()
                    .zip(ms)
                    .map(|(t, m)| (1.0 - alpha) * t + alpha * m)
                    .collect())
            }
        }
    }

    /// Top `min(k, N)` row positions with scores, ties broken by ascending id.
    pub fn rank_positions(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(usize, f64)>, RetrievalError> {
        if k == 0 {
            return Err(IndexError::InvalidK.into());
        }
        let scores = self.scores(query)?;
        Ok(index::rank_rows(self.ids(), &scores, k))
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredChunk>, RetrievalError> {
        Ok(self
            .rank_positions(query, k)?
            .into_iter()
            .map(|(i, score)| ScoredChunk {
                chunk_id: self.ids()[i].clone(),
                score,
            })
            .collect())
    }
}

/// Builds the index bundle for `strategy`, encoding whatever it needs.
pub fn build_bundle(
    corpus: &Corpus,
    strategy: &StrategyConfig,
    encoder: &dyn Encoder,
    max_in_flight: usize,
) -> Result<IndexBundle, RetrievalError> {
    let base = strategy.base();
    let variant = match base {
        BaseStrategy::MatPrefix => Some(MatVariant::Prefix),
        BaseStrategy::MatSuffix => Some(MatVariant::Suffix),
        _ => None,
    };
    if let Some(variant) = variant {
        let texts: Vec<String> = corpus
            .chunks()
            .iter()
            .map(|c| build_mat_text(&ablate_metadata(&c.metadata, &strategy.metadata_mask), &c.text, variant))
            .collect();
        let vectors = encoder.encode_batch(&texts, max_in_flight)?;
        let entries = corpus
            .chunks()
            .iter()
            .map(|c| c.chunk_id.clone())
            .zip(vectors)
            .collect();
        let index = VectorIndex::build(entries, true, &encoder.descriptor().name, &strategy.label())?;
        return Ok(IndexBundle {
            strategy: strategy.clone(),
            indices: BundleIndices::Single(index),
        });
    }
    let embeddings = embed_chunks(
        corpus,
        encoder,
        &strategy.metadata_mask,
        base.uses_metadata_encoder(),
        max_in_flight,
    )?;
    IndexBundle::from_embeddings(&embeddings, strategy.clone())
}

/// The query text a strategy actually embeds.
pub fn effective_query(
    strategy: &StrategyConfig,
    query_text: &str,
    hints: &SchemaHints,
    reformulator: &dyn Reformulator,
) -> String {
    if strategy.variant.is_reformulated() {
        reformulate_query(query_text, hints, reformulator)
    } else {
        query_text.to_string()
    }
}

/// Embeds the (possibly reformulated) query with the text encoder and ranks.
pub fn retrieve(
    bundle: &IndexBundle,
    encoder: &dyn Encoder,
    reformulator: &dyn Reformulator,
    hints: &SchemaHints,
    query_text: &str,
    k: usize,
) -> Result<Vec<ScoredChunk>, RetrievalError> {
    let text = effective_query(bundle.strategy(), query_text, hints, reformulator);
    let query = encoder.encode(&text)?;
    bundle.search(&query, k)
}
