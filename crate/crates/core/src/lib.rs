//! Metadata-aware dense retrieval.
//!
//! Six retrieval strategies over metadata-annotated chunk corpora (plain text,
//! metadata-as-text prefix/suffix, unified weighted-sum fusion, late fusion and
//! query reformulation), the four retrieval metrics, α-sweeps, field
//! ablations and the pairwise embedding-space separation analysis.
//!
//! ```
//! use metaret::encoder::HashingEncoder;
//! use metaret::eval::{embed_queries, evaluate_strategy};
//! use metaret::retrieval::{build_bundle, BaseStrategy, IdentityReformulator, SchemaHints, StrategyConfig};
//! use metaret::QueryCategory;
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let corpus = metaret::synthetic::sectioned_corpus();
//! let encoder = HashingEncoder::new(HashingEncoder::DEFAULT_DIM)?;
//! let strategy = StrategyConfig::new(BaseStrategy::unified(0.5)?);
//! let bundle = build_bundle(&corpus, &strategy, &encoder, 4)?;
//! let hints = SchemaHints::default();
//! let queries = embed_queries(&corpus, &strategy, &encoder, &IdentityReformulator, &hints, 4)?;
//! let metrics = evaluate_strategy(&corpus, &bundle, &queries, 10, 50)?;
//! assert!(metrics[&QueryCategory::General].title_at_k[&5] > 90.0);
//! # Ok(())
//! # }
//! ```

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod fusion;
pub mod index;
pub mod report;
pub mod retrieval;
pub mod synthetic;

mod fsutil;

pub use corpus::{
    ablate_metadata, chunk_text, load_corpus, Chunk, Corpus, CorpusError, DocumentKey, FieldMask, MetadataField,
    MetadataRecord, QueryCase, QueryCategory,
};
pub use encoder::{EmbeddingVector, Encoder, EncoderDescriptor, EncoderError, EncoderKind};
pub use fusion::{FusionError, FusionWeight, MatVariant};
pub use index::{IndexError, ScoredChunk, VectorIndex};
