//! Retrieval metrics, α-sweeps, metadata-field ablations and the pairwise
//! embedding-space separation analysis.
//!
//! All percentages are in `[0, 100]`. A query *fails* when no supporting
//! chunk appears within `failure_cap` ranks; failed queries do not contribute
//! to the average matched rank.

mod separation;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, FieldMask, MetadataField, QueryCategory};
use crate::encoder::{EmbeddingVector, Encoder, EncoderError};
use crate::fusion::{FusionError, FusionWeight, MatVariant};
use crate::retrieval::{
    build_bundle, effective_query, BaseStrategy, ChunkEmbeddings, IndexBundle, Reformulator, RetrievalError,
    SchemaHints, StrategyConfig,
};

pub use separation::{
    neumaier_sum, pair_analysis, pair_separation, proposition_check, sample_pairs, separation_stats, PairPlan,
    PairSampling, PropositionReport, SeparationReport, SimilarityHistogram, VariantSeparation, DEFAULT_TAIL_THRESHOLD,
};

pub const DEFAULT_K_MAX: usize = 10;
pub const DEFAULT_FAILURE_CAP: usize = 50;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no {} queries to evaluate", .0.name())]
    NoQueries(QueryCategory),
    #[error("{0} pair stratum is empty")]
    EmptyStratum(&'static str),
    #[error("invalid evaluation parameters: {0}")]
    InvalidParams(String),
    #[error("embeddings cover {got} items, expected {expected}")]
    Coverage { expected: usize, got: usize },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Where one query's evidence landed in the full ranking. Ranks are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub category: QueryCategory,
    pub ranked_ids: Vec<String>,
    pub first_support_rank: Option<usize>,
    pub first_target_doc_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub context_at_k: BTreeMap<usize, f64>,
    pub title_at_k: BTreeMap<usize, f64>,
    /// `None` when every query failed.
    pub avg_matched_rank: Option<f64>,
    pub failure_rate: f64,
    pub n_queries: usize,
    pub failure_cap: usize,
}

/// Metrics per query category.
pub type StrategyMetrics = BTreeMap<QueryCategory, MetricsSummary>;

fn check_cutoffs(k_max: usize, failure_cap: usize) -> Result<(), EvalError> {
    if k_max == 0 || failure_cap < k_max {
        return Err(EvalError::InvalidParams(format!(
            "need 1 <= k_max <= failure_cap (k_max = {k_max}, failure_cap = {failure_cap})"
        )));
    }
    Ok(())
}

fn pct(hits: usize, n: usize) -> f64 {
    100.0 * hits as f64 / n as f64
}

/// Embeds every query as `strategy` would see it (reformulated or not),
/// always with the text encoder.
pub fn embed_queries(
    corpus: &Corpus,
    strategy: &StrategyConfig,
    encoder: &dyn Encoder,
    reformulator: &dyn Reformulator,
    hints: &SchemaHints,
    max_in_flight: usize,
) -> Result<Vec<EmbeddingVector>, EvalError> {
    let texts: Vec<String> = corpus
        .queries()
        .iter()
        .map(|q| effective_query(strategy, &q.text, hints, reformulator))
        .collect();
    Ok(encoder.encode_batch(&texts, max_in_flight)?)
}

/// Ranks the full bundle once per query. `query_vecs` follows `corpus.queries()`.
pub fn query_outcomes(
    corpus: &Corpus,
    bundle: &IndexBundle,
    query_vecs: &[EmbeddingVector],
) -> Result<Vec<QueryOutcome>, EvalError> {
    if query_vecs.len() != corpus.queries().len() {
        return Err(EvalError::Coverage {
            expected: corpus.queries().len(),
            got: query_vecs.len(),
        });
    }
    let n = bundle.len();
    corpus
        .queries()
        .par_iter()
        .zip(query_vecs)
        .map(|(q, v)| {
            let ranking = bundle.rank_positions(v, n)?;
            let ids = bundle.ids();
            let support: HashSet<&str> = q.supporting_chunk_ids.iter().map(String::as_str).collect();
            let mut first_support_rank = None;
            let mut first_target_doc_rank = None;
            let mut ranked_ids = Vec::with_capacity(n);
            for (rank0, &(row, _)) in ranking.iter().enumerate() {
                let id = &ids[row];
                if first_support_rank.is_none() && support.contains(id.as_str()) {
                    first_support_rank = Some(rank0 + 1);
                }
                if first_target_doc_rank.is_none() && corpus.chunk(id).is_some_and(|c| c.doc_key == q.target) {
                    first_target_doc_rank = Some(rank0 + 1);
                }
                ranked_ids.push(id.clone());
            }
            Ok(QueryOutcome {
                query_id: q.query_id.clone(),
                category: q.category,
                ranked_ids,
                first_support_rank,
                first_target_doc_rank,
            })
        })
        .collect()
}

/// Aggregates outcomes (all of one category) into the four metrics.
pub fn summarize(outcomes: &[QueryOutcome], k_max: usize, failure_cap: usize) -> Result<MetricsSummary, EvalError> {
    check_cutoffs(k_max, failure_cap)?;
    let n = outcomes.len();
    if n == 0 {
        return Err(EvalError::InvalidParams("no outcomes to summarize".into()));
    }
    let within = |rank: Option<usize>, k: usize| outcomes_hits(rank, k);
    let count = |f: &dyn Fn(&QueryOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count();
    let mut context_at_k = BTreeMap::new();
    let mut title_at_k = BTreeMap::new();
    for k in 1..=k_max {
        context_at_k.insert(k, pct(count(&|o| within(o.first_support_rank, k)), n));
        title_at_k.insert(k, pct(count(&|o| within(o.first_target_doc_rank, k)), n));
    }
    let matched: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.first_support_rank.filter(|&r| r <= failure_cap))
        .map(|r| r as f64)
        .collect();
    let avg_matched_rank = (!matched.is_empty()).then(|| neumaier_sum(&matched) / matched.len() as f64);
    let context_at_cap = pct(matched.len(), n);
    Ok(MetricsSummary {
        context_at_k,
        title_at_k,
        avg_matched_rank,
        failure_rate: 100.0 - context_at_cap,
        n_queries: n,
        failure_cap,
    })
}

fn outcomes_hits(rank: Option<usize>, k: usize) -> bool {
    rank.is_some_and(|r| r <= k)
}

fn summarize_by_category(
    outcomes: &[QueryOutcome],
    k_max: usize,
    failure_cap: usize,
) -> Result<StrategyMetrics, EvalError> {
    let mut out = StrategyMetrics::new();
    for category in QueryCategory::ALL {
        let subset: Vec<QueryOutcome> = outcomes.iter().filter(|o| o.category == category).cloned().collect();
        if subset.is_empty() {
            return Err(EvalError::NoQueries(category));
        }
        out.insert(category, summarize(&subset, k_max, failure_cap)?);
    }
    Ok(out)
}

/// Metrics for one bundle, reported separately per query category.
pub fn evaluate_strategy(
    corpus: &Corpus,
    bundle: &IndexBundle,
    query_vecs: &[EmbeddingVector],
    k_max: usize,
    failure_cap: usize,
) -> Result<StrategyMetrics, EvalError> {
    check_cutoffs(k_max, failure_cap)?;
    for category in QueryCategory::ALL {
        if corpus.queries_in(category).next().is_none() {
            return Err(EvalError::NoQueries(category));
        }
    }
    let outcomes = query_outcomes(corpus, bundle, query_vecs)?;
    summarize_by_category(&outcomes, k_max, failure_cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFamily {
    Unified,
    LateFusion,
}

impl SweepFamily {
    pub fn strategy(self, alpha: FusionWeight) -> BaseStrategy {
        match self {
            SweepFamily::Unified => BaseStrategy::Unified { alpha },
            SweepFamily::LateFusion => BaseStrategy::LateFusion { alpha },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub metrics: StrategyMetrics,
}

/// The α grid `0.0, 0.1, …, 1.0`.
pub fn default_alphas() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// One evaluation per α, re-fusing `embeddings` without re-encoding. The
/// metadata mask is whatever `embeddings.meta` was encoded under.
pub fn alpha_sweep(
    corpus: &Corpus,
    embeddings: &ChunkEmbeddings,
    query_vecs: &[EmbeddingVector],
    family: SweepFamily,
    alphas: &[f64],
    k_max: usize,
    failure_cap: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    if embeddings.len() != corpus.chunks().len() {
        return Err(EvalError::Coverage {
            expected: corpus.chunks().len(),
            got: embeddings.len(),
        });
    }
    let weights = alphas
        .iter()
        .map(|&a| FusionWeight::new(a))
        .collect::<Result<Vec<_>, _>>()?;
    weights
        .into_iter()
        .map(|w| {
            let bundle = IndexBundle::from_embeddings(embeddings, StrategyConfig::new(family.strategy(w)))?;
            Ok(SweepRow {
                alpha: w.alpha(),
                metrics: evaluate_strategy(corpus, &bundle, query_vecs, k_max, failure_cap)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCondition {
    pub name: String,
    pub mask: FieldMask,
}

impl AblationCondition {
    pub fn new(name: impl Into<String>, mask: FieldMask) -> Self {
        Self {
            name: name.into(),
            mask,
        }
    }
}

/// baseline (no metadata), full, w/o section, w/o company+year.
pub fn canonical_conditions() -> Vec<AblationCondition> {
    use MetadataField::*;
    vec![
        AblationCondition::new("baseline", MetadataField::all_mask()),
        AblationCondition::new("full", FieldMask::new()),
        AblationCondition::new("w/o section", [Section].into_iter().collect()),
        AblationCondition::new("w/o company+year", [CompanyName, PeriodOfReport].into_iter().collect()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub condition: String,
    pub metrics: StrategyMetrics,
}

/// One metadata-as-text evaluation per masking condition. Queries are not
/// affected by masks, so `query_vecs` are shared.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    corpus: &Corpus,
    encoder: &dyn Encoder,
    conditions: &[AblationCondition],
    variant: MatVariant,
    query_vecs: &[EmbeddingVector],
    k_max: usize,
    failure_cap: usize,
    max_in_flight: usize,
) -> Result<Vec<AblationRow>, EvalError> {
    if conditions.is_empty() {
        return Err(EvalError::InvalidParams("no ablation conditions".into()));
    }
    let base = match variant {
        MatVariant::Prefix => BaseStrategy::MatPrefix,
        MatVariant::Suffix => BaseStrategy::MatSuffix,
    };
    conditions
        .iter()
        .map(|c| {
            let strategy = StrategyConfig::new(base).with_mask(c.mask.clone());
            let bundle = build_bundle(corpus, &strategy, encoder, max_in_flight)?;
            Ok(AblationRow {
                condition: c.name.clone(),
                metrics: evaluate_strategy(corpus, &bundle, query_vecs, k_max, failure_cap)?,
            })
        })
        .collect()
}
