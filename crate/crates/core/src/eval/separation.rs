//! Same-document vs cross-document pair statistics.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Corpus;
use crate::encoder::EmbeddingVector;
use crate::fusion::{cosine_sq_norms, dot, FusionError};

pub const DEFAULT_TAIL_THRESHOLD: f64 = 0.8;

/// Compensated (Neumaier) sum.
pub fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for &x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = neumaier_sum(values) / n;
    let sq: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, neumaier_sum(&sq) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub mean_margin: f64,
    pub cohens_d: f64,
    pub fisher_f: f64,
    pub auc: f64,
    pub ks_distance: f64,
    pub tail_pos: f64,
    pub tail_neg: f64,
    pub n_pos_pairs: usize,
    pub n_neg_pairs: usize,
    pub tail_threshold: f64,
}

/// Statistics of positive vs negative similarity samples. Variances are
/// population variances. When both strata are constant, d and F are 0 for a
/// zero margin and infinite otherwise.
pub fn separation_stats(pos: &[f64], neg: &[f64], tail_threshold: f64) -> Result<SeparationReport, EvalError> {
    if pos.is_empty() {
        return Err(EvalError::EmptyStratum("positive"));
    }
    if neg.is_empty() {
        return Err(EvalError::EmptyStratum("negative"));
    }
    if pos.iter().chain(neg).any(|x| !x.is_finite()) {
        return Err(EvalError::InvalidParams("non-finite similarity".into()));
    }
    let (mp, vp) = mean_and_variance(pos);
    let (mn, vn) = mean_and_variance(neg);
    let margin = mp - mn;
    let var_sum = vp + vn;
    let (cohens_d, fisher_f) = if var_sum == 0.0 {
        if margin == 0.0 {
            (0.0, 0.0)
        } else {
            (margin.signum() * f64::INFINITY, f64::INFINITY)
        }
    } else {
        (margin / (var_sum / 2.0).sqrt(), margin * margin / var_sum)
    };
    let tail = |xs: &[f64]| xs.iter().filter(|&&x| x >= tail_threshold).count() as f64 / xs.len() as f64;
    Ok(SeparationReport {
        mean_margin: margin,
        cohens_d,
        fisher_f,
        auc: auc_rank_sum(pos, neg),
        ks_distance: ks_distance(pos, neg),
        tail_pos: tail(pos),
        tail_neg: tail(neg),
        n_pos_pairs: pos.len(),
        n_neg_pairs: neg.len(),
        tail_threshold,
    })
}

/// Mann-Whitney P(pos > neg) + ½P(tie) from midranks. Ranks are doubled so
/// the rank sum stays an exact integer.
fn auc_rank_sum(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&x| (x, true))
        .chain(neg.iter().map(|&x| (x, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let n_pos_in_group = all[start..end].iter().filter(|e| e.1).count() as u128;
        // Ranks start+1 ..= end share the midrank (start + 1 + end) / 2.
        doubled_rank_sum += n_pos_in_group * (start + 1 + end) as u128;
        start = end;
    }
    let (np, nn) = (pos.len() as u128, neg.len() as u128);
    let doubled_u = doubled_rank_sum - np * (np + 1);
    doubled_u as f64 / (2 * np * nn) as f64
}

/// sup |CDF_pos − CDF_neg| over the pooled sample points.
fn ks_distance(pos: &[f64], neg: &[f64]) -> f64 {
    let sorted = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (p, n) = (sorted(pos), sorted(neg));
    let (np, nn) = (p.len() as i128, n.len() as i128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best: i128 = 0;
    while i < p.len() || j < n.len() {
        let v = match (p.get(i), n.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < p.len() && p[i] == v {
            i += 1;
        }
        while j < n.len() && n[j] == v {
            j += 1;
        }
        best = best.max((i as i128 * nn - j as i128 * np).abs());
    }
    best as f64 / (np * nn) as f64
}

/// When to enumerate every pair and how many to draw otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSampling {
    /// Enumerate all pairs when the total does not exceed this.
    pub exhaustive_limit: u64,
    /// Total sampled pairs, split evenly between the two strata.
    pub budget: usize,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self {
            exhaustive_limit: 25_000_000,
            budget: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairPlan {
    Exhaustive,
    /// Sorted `(i, j)` index pairs with `i < j`.
    Sampled {
        positive: Vec<(u32, u32)>,
        negative: Vec<(u32, u32)>,
    },
}

/// Algorithm L reservoir over a stream of unknown length.
struct Reservoir {
    k: usize,
    items: Vec<(u32, u32)>,
    seen: u64,
    next_take: u64,
    w: f64,
}

impl Reservoir {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k),
            seen: 0,
            next_take: 0,
            w: 1.0,
        }
    }

    fn unit(rng: &mut ChaCha8Rng) -> f64 {
        // (0, 1]: keeps the logarithms finite.
        1.0 - rng.random::<f64>()
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng) {
        self.w *= (Self::unit(rng).ln() / self.k as f64).exp();
        let skip = (Self::unit(rng).ln() / (1.0 - self.w).ln()).floor();
        self.next_take = self.seen + if skip.is_finite() { skip as u64 } else { u64::MAX / 2 };
    }

    fn offer(&mut self, pair: (u32, u32), rng: &mut ChaCha8Rng) {
        if self.k == 0 {
            return;
        }
        if self.items.len() < self.k {
            self.items.push(pair);
            self.seen += 1;
            if self.items.len() == self.k {
                self.advance(rng);
            }
            return;
        }
        if self.seen == self.next_take {
            let slot = rng.random_range(0..self.k);
            self.items[slot] = pair;
            self.seen += 1;
            self.advance(rng);
        } else {
            self.seen += 1;
        }
    }

    fn into_sorted(mut self) -> Vec<(u32, u32)> {
        self.items.sort_unstable();
        self.items
    }
}

/// Chooses the pairs for the separation analysis. `groups[i]` identifies
/// the document of item `i`; equal groups make a positive pair.
pub fn sample_pairs(groups: &[usize], sampling: PairSampling, seed: u64) -> Result<PairPlan, EvalError> {
    let n = groups.len() as u64;
    let total = n * n.saturating_sub(1) / 2;
    if total <= sampling.exhaustive_limit {
        return Ok(PairPlan::Exhaustive);
    }
    if sampling.budget < 10_000 {
        return Err(EvalError::InvalidParams(format!(
            "pair budget {} is below 10000",
            sampling.budget
        )));
    }
    let per_stratum = sampling.budget / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Reservoir::new(per_stratum);
    let mut neg = Reservoir::new(per_stratum);
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let pair = (i as u32, j as u32);
            if groups[i] == groups[j] {
                pos.offer(pair, &mut rng);
            } else {
                neg.offer(pair, &mut rng);
            }
        }
    }
    Ok(PairPlan::Sampled {
        positive: pos.into_sorted(),
        negative: neg.into_sorted(),
    })
}

/// Dense document id per chunk, in order of first appearance.
fn doc_groups(corpus: &Corpus) -> Vec<usize> {
    let mut ids = HashMap::new();
    corpus
        .chunks()
        .iter()
        .map(|c| {
            let next = ids.len();
            *ids.entry(&c.doc_key).or_insert(next)
        })
        .collect()
}

struct Prepared<'a> {
    rows: Vec<&'a [f64]>,
    sq_norms: Vec<f64>,
}

fn prepare(vectors: &[EmbeddingVector], expected: usize) -> Result<Prepared<'_>, EvalError> {
    if vectors.len() != expected {
        return Err(EvalError::Coverage {
            expected,
            got: vectors.len(),
        });
    }
    let dim = vectors.first().map_or(0, EmbeddingVector::dim);
    let mut rows = Vec::with_capacity(vectors.len());
    let mut sq_norms = Vec::with_capacity(vectors.len());
    for v in vectors {
        if v.dim() != dim {
            return Err(FusionError::DimMismatch(dim, v.dim()).into());
        }
        let s = dot(v.values(), v.values());
        if s.sqrt() < crate::fusion::ZERO_NORM {
            return Err(FusionError::ZeroVector.into());
        }
        rows.push(v.values());
        sq_norms.push(s);
    }
    Ok(Prepared { rows, sq_norms })
}

impl Prepared<'_> {
    fn cos(&self, i: usize, j: usize) -> f64 {
        cosine_sq_norms(self.rows[i], self.rows[j], self.sq_norms[i], self.sq_norms[j])
    }
}

/// Positive and negative pair cosines, in a fixed order.
fn pair_cosines(plan: &PairPlan, groups: &[usize], p: &Prepared<'_>) -> (Vec<f64>, Vec<f64>) {
    match plan {
        PairPlan::Exhaustive => {
            let per_row: Vec<(Vec<f64>, Vec<f64>)> = (0..groups.len())
                .into_par_iter()
                .map(|i| {
                    let mut pos = Vec::new();
                    let mut neg = Vec::new();
                    for j in i + 1..groups.len() {
                        let c = p.cos(i, j);
                        if groups[i] == groups[j] {
                            pos.push(c);
                        } else {
                            neg.push(c);
                        }
                    }
                    (pos, neg)
                })
                .collect();
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (a, b) in per_row {
                pos.extend(a);
                neg.extend(b);
            }
            (pos, neg)
        }
        PairPlan::Sampled { positive, negative } => {
            let cos = |pairs: &[(u32, u32)]| -> Vec<f64> {
                pairs.par_iter().map(|&(i, j)| p.cos(i as usize, j as usize)).collect()
            };
            (cos(positive), cos(negative))
        }
    }
}

/// Share of each stratum's cosines per equal-width bin over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityHistogram {
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

impl SimilarityHistogram {
    fn from_samples(pos: &[f64], neg: &[f64], bins: usize) -> Self {
        let edges = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
        let shares = |xs: &[f64]| {
            let mut counts = vec![0usize; bins];
            for &x in xs {
                let b = (((x + 1.0) / 2.0) * bins as f64).floor() as isize;
                counts[b.clamp(0, bins as isize - 1) as usize] += 1;
            }
            counts.into_iter().map(|c| c as f64 / xs.len() as f64).collect()
        };
        Self {
            edges,
            pos: shares(pos),
            neg: shares(neg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSeparation {
    pub variant: String,
    pub report: SeparationReport,
    pub histogram: SimilarityHistogram,
}

/// Separation report and similarity histogram per named embedding variant,
/// all over the same pair set.
pub fn pair_analysis(
    corpus: &Corpus,
    variants: &[(&str, &[EmbeddingVector])],
    sampling: PairSampling,
    seed: u64,
    tail_threshold: f64,
    bins: usize,
) -> Result<Vec<VariantSeparation>, EvalError> {
    if bins == 0 {
        return Err(EvalError::InvalidParams("histogram needs at least one bin".into()));
    }
    let groups = doc_groups(corpus);
    let plan = sample_pairs(&groups, sampling, seed)?;
    variants
        .iter()
        .map(|(name, vectors)| {
            let prepared = prepare(vectors, groups.len())?;
            let (pos, neg) = pair_cosines(&plan, &groups, &prepared);
            Ok(VariantSeparation {
                variant: name.to_string(),
                report: separation_stats(&pos, &neg, tail_threshold)?,
                histogram: SimilarityHistogram::from_samples(&pos, &neg, bins),
            })
        })
        .collect()
}

/// One report per named embedding variant, all over the same pair set.
pub fn pair_separation(
    corpus: &Corpus,
    variants: &[(&str, &[EmbeddingVector])],
    sampling: PairSampling,
    seed: u64,
    tail_threshold: f64,
) -> Result<Vec<(String, SeparationReport)>, EvalError> {
    Ok(pair_analysis(corpus, variants, sampling, seed, tail_threshold, 1)?
        .into_iter()
        .map(|v| (v.variant, v.report))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropositionReport {
    /// Mean same-document cosine, enriched minus plain.
    pub intra_gain: f64,
    /// Mean cross-document cosine, plain minus enriched.
    pub inter_drop: f64,
    /// Variance of query-to-chunk cosines, enriched minus plain.
    pub variance_gain: f64,
    pub queries_used: usize,
    pub plain_intra: f64,
    pub enriched_intra: f64,
    pub plain_inter: f64,
    pub enriched_inter: f64,
    pub plain_variance: f64,
    pub enriched_variance: f64,
}

fn query_chunk_cosines(queries: &[EmbeddingVector], chunks: &Prepared<'_>) -> Result<Vec<f64>, EvalError> {
    let q = prepare(queries, queries.len())?;
    if let (Some(a), Some(b)) = (q.rows.first(), chunks.rows.first()) {
        if a.len() != b.len() {
            return Err(FusionError::DimMismatch(a.len(), b.len()).into());
        }
    }
    let per_query: Vec<Vec<f64>> = (0..q.rows.len())
        .into_par_iter()
        .map(|i| {
            (0..chunks.rows.len())
                .map(|j| cosine_sq_norms(q.rows[i], chunks.rows[j], q.sq_norms[i], chunks.sq_norms[j]))
                .collect()
        })
        .collect();
    Ok(per_query.concat())
}

/// Empirical check of the cohesion, confusion and variance effects of
/// enriching chunk embeddings with metadata. `query_vecs` are the text
/// encoder's query embeddings, shared by both variants.
pub fn proposition_check(
    corpus: &Corpus,
    plain: &[EmbeddingVector],
    enriched: &[EmbeddingVector],
    query_vecs: &[EmbeddingVector],
    sampling: PairSampling,
    seed: u64,
) -> Result<PropositionReport, EvalError> {
    let groups = doc_groups(corpus);
    let plan = sample_pairs(&groups, sampling, seed)?;
    let plain_p = prepare(plain, groups.len())?;
    let enriched_p = prepare(enriched, groups.len())?;
    let (pp, pn) = pair_cosines(&plan, &groups, &plain_p);
    let (ep, en) = pair_cosines(&plan, &groups, &enriched_p);
    if pp.is_empty() {
        return Err(EvalError::EmptyStratum("positive"));
    }
    if pn.is_empty() {
        return Err(EvalError::EmptyStratum("negative"));
    }
    if query_vecs.is_empty() {
        return Err(EvalError::InvalidParams(
            "no queries for the variance comparison".into(),
        ));
    }
    let mean = |xs: &[f64]| neumaier_sum(xs) / xs.len() as f64;
    let (_, plain_variance) = mean_and_variance(&query_chunk_cosines(query_vecs, &plain_p)?);
    let (_, enriched_variance) = mean_and_variance(&query_chunk_cosines(query_vecs, &enriched_p)?);
    let (plain_intra, enriched_intra) = (mean(&pp), mean(&ep));
    let (plain_inter, enriched_inter) = (mean(&pn), mean(&en));
    Ok(PropositionReport {
        intra_gain: enriched_intra - plain_intra,
        inter_drop: plain_inter - enriched_inter,
        variance_gain: enriched_variance - plain_variance,
        queries_used: query_vecs.len(),
        plain_intra,
        enriched_intra,
        plain_inter,
        enriched_inter,
        plain_variance,
        enriched_variance,
    })
}
