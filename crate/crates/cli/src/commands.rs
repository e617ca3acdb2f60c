use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use metaret::encoder::{CachedEncoder, EmbeddingCache, HashingEncoder, RemoteEncoder};
use metaret::eval::{
    ablation_run, alpha_sweep, embed_queries, evaluate_strategy, pair_analysis, proposition_check, PropositionReport,
    StrategyMetrics, SweepFamily, SweepRow, VariantSeparation,
};
use metaret::fusion::{fuse_unified, serialize_metadata};
use metaret::report::{
    self, headline_rows, histogram_chart, histogram_rows, k_curve_charts, metric_rows, separation_rows, sweep_charts,
    sweep_rows, HeadlineRow, MetricRow, CONTEXT, TITLE,
};
use metaret::retrieval::{
    build_bundle, effective_query, embed_chunks, IdentityReformulator, Reformulator, RemoteReformulator,
    RuleBasedReformulator, SchemaHints, StrategyConfig,
};
use metaret::{ablate_metadata, load_corpus, Corpus, EmbeddingVector, Encoder, FieldMask, FusionWeight, QueryCategory};
use serde::Serialize;

use crate::config::{ReformulatorKind, RunConfig};
use crate::{Invalid, Settings};

const HINT_EXAMPLES: usize = 5;

fn open_corpus(s: &Settings) -> Result<Corpus> {
    load_corpus(&s.corpus).with_context(|| format!("loading {}", s.corpus.display()))
}

/// The configured encoder, behind the embedding cache when one is set.
/// Remote encoders always get a cache, by default inside the output directory.
fn build_encoder(s: &Settings) -> Result<Box<dyn Encoder>> {
    let c = &s.config;
    let (inner, default_cache): (Box<dyn Encoder>, Option<PathBuf>) = match c.encoder.as_str() {
        "test" => (Box::new(HashingEncoder::new(HashingEncoder::DEFAULT_DIM)?), None),
        spec => match spec.strip_prefix("remote:") {
            Some(model) if !model.is_empty() => (
                Box::new(RemoteEncoder::from_env(c.remote.apply(model))?),
                Some(s.out.join("embeddings.cache")),
            ),
            _ => {
                return Err(Invalid(format!(
                    "unknown encoder `{spec}` (expected `test` or `remote:<model>`)"
                ))
                .into())
            }
        },
    };
    match c.cache.clone().or(default_cache) {
        Some(path) => {
            ensure_parent(&path)?;
            let cache = EmbeddingCache::open(&path)?;
            info!("embedding cache {} holds {} vectors", path.display(), cache.len());
            Ok(Box::new(CachedEncoder::new(inner, cache)))
        }
        None => Ok(inner),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn out_dir(s: &Settings) -> Result<&Path> {
    std::fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    Ok(&s.out)
}

fn build_reformulator(config: &RunConfig, corpus: &Corpus) -> Result<Box<dyn Reformulator>> {
    let r = &config.reformulator;
    let rules = || -> Result<RuleBasedReformulator> {
        let mut rules = RuleBasedReformulator::from_corpus(corpus);
        if let Some(path) = &r.alias_file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            rules.extend(metaret::retrieval::parse_alias_table(&text)?);
        }
        Ok(rules)
    };
    Ok(match r.kind {
        ReformulatorKind::Identity => Box::new(IdentityReformulator),
        ReformulatorKind::RuleBased => Box::new(rules()?),
        ReformulatorKind::Remote => {
            let remote = r.remote.clone().expect("validated");
            let key = std::env::var(metaret::encoder::API_KEY_ENV).ok();
            Box::new(RemoteReformulator::new(remote, key, rules()?))
        }
    })
}

/// Run-wide facts written into every JSON report.
#[derive(Serialize)]
struct RunInfo<'a> {
    seed: u64,
    encoder: &'a str,
    chunks: usize,
    queries: usize,
}

fn run_info<'a>(s: &'a Settings, corpus: &Corpus, encoder: &'a dyn Encoder) -> RunInfo<'a> {
    RunInfo {
        seed: s.config.seed,
        encoder: &encoder.descriptor().name,
        chunks: corpus.chunks().len(),
        queries: corpus.queries().len(),
    }
}

fn plain_queries(s: &Settings, corpus: &Corpus, encoder: &dyn Encoder) -> Result<Vec<EmbeddingVector>> {
    let hints = SchemaHints::default();
    Ok(embed_queries(
        corpus,
        &StrategyConfig::plain(),
        encoder,
        &IdentityReformulator,
        &hints,
        s.config.max_in_flight,
    )?)
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn ingest(s: &Settings) -> Result<()> {
    let corpus = open_corpus(s)?;
    let mut companies: BTreeMap<&str, usize> = BTreeMap::new();
    let mut years: BTreeMap<&str, usize> = BTreeMap::new();
    let mut documents = std::collections::BTreeSet::new();
    for c in corpus.chunks() {
        *companies.entry(&c.doc_key.company).or_default() += 1;
        *years.entry(&c.doc_key.year).or_default() += 1;
        documents.insert(&c.doc_key);
    }
    println!("corpus {} (schema {})", s.corpus.display(), corpus.schema_version());
    println!("chunks\t{}", corpus.chunks().len());
    println!("documents\t{}", documents.len());
    println!("queries\t{}", corpus.queries().len());
    for category in QueryCategory::ALL {
        println!("queries.{category}\t{}", corpus.queries_in(category).count());
    }
    for (company, n) in companies {
        println!("company\t{company}\t{n}");
    }
    for (year, n) in years {
        println!("year\t{year}\t{n}");
    }
    Ok(())
}

#[derive(Serialize)]
struct EmbedSummary<'a> {
    #[serde(flatten)]
    run: RunInfo<'a>,
    dim: usize,
    metadata_headers: usize,
}

pub fn embed(s: &Settings) -> Result<()> {
    let corpus = open_corpus(s)?;
    let encoder = build_encoder(s)?;
    let n = s.config.max_in_flight;
    let mut masks: Vec<FieldMask> = vec![FieldMask::new()];
    masks.extend(s.config.strategies.iter().map(|st| st.metadata_mask.clone()));
    masks.sort();
    masks.dedup();
    let mut headers = std::collections::BTreeSet::new();
    for mask in &masks {
        headers.extend(
            corpus
                .chunks()
                .iter()
                .map(|c| serialize_metadata(&ablate_metadata(&c.metadata, mask)))
                .filter(|h| !h.is_empty()),
        );
    }
    let headers: Vec<String> = headers.into_iter().collect();
    let texts: Vec<String> = corpus.chunks().iter().map(|c| c.text.clone()).collect();
    encoder.encode_batch(&texts, n)?;
    encoder.encode_batch(&headers, n)?;
    plain_queries(s, &corpus, encoder.as_ref())?;
    let summary = EmbedSummary {
        run: run_info(s, &corpus, encoder.as_ref()),
        dim: encoder.descriptor().dim,
        metadata_headers: headers.len(),
    };
    report::write_json(&out_dir(s)?.join("embed.json"), &summary)?;
    println!(
        "encoded {} chunk texts, {} metadata headers and {} queries with {}",
        texts.len(),
        headers.len(),
        corpus.queries().len(),
        encoder.descriptor().name
    );
    Ok(())
}

#[derive(Serialize)]
struct IndexEntry {
    strategy: String,
    role: &'static str,
    file: String,
    rows: usize,
    dim: usize,
}

#[derive(Serialize)]
struct IndexManifest<'a> {
    #[serde(flatten)]
    run: RunInfo<'a>,
    indices: Vec<IndexEntry>,
}

pub fn index(s: &Settings) -> Result<()> {
    let corpus = open_corpus(s)?;
    let encoder = build_encoder(s)?;
    let dir = out_dir(s)?.join("index");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::new();
    for strategy in &s.config.strategies {
        let bundle = build_bundle(&corpus, strategy, encoder.as_ref(), s.config.max_in_flight)?;
        for (role, index) in bundle.indices() {
            let file = format!("{}.{role}.idx", file_stem(&strategy.label()));
            index.save(&dir.join(&file))?;
            entries.push(IndexEntry {
                strategy: strategy.label(),
                role,
                file,
                rows: index.len(),
                dim: index.dim(),
            });
        }
    }
    let manifest = IndexManifest {
        run: run_info(s, &corpus, encoder.as_ref()),
        indices: entries,
    };
    report::write_json(&dir.join("manifest.json"), &manifest)?;
    println!("wrote {} index files to {}", manifest.indices.len(), dir.display());
    Ok(())
}

pub fn query(s: &Settings, label: Option<&str>, k: usize, text: &str) -> Result<()> {
    let strategies = &s.config.strategies;
    let strategy = match label {
        None => &strategies[0],
        Some(l) => strategies.iter().find(|st| st.label() == l).ok_or_else(|| {
            let known: Vec<String> = strategies.iter().map(|st| st.label()).collect();
            Invalid(format!(
                "strategy `{l}` is not configured (known: {})",
                known.join(", ")
            ))
        })?,
    };
    let corpus = open_corpus(s)?;
    let encoder = build_encoder(s)?;
    let reformulator = build_reformulator(&s.config, &corpus)?;
    let hints = SchemaHints::from_corpus(&corpus, HINT_EXAMPLES);
    let bundle = build_bundle(&corpus, strategy, encoder.as_ref(), s.config.max_in_flight)?;
    let effective = effective_query(strategy, text, &hints, reformulator.as_ref());
    if effective != text {
        info!("reformulated query: {effective:?}");
    }
    let hits = bundle.search(&encoder.encode(&effective)?, k)?;
    println!("rank\tchunk_id\tscore\tdocument");
    for (i, hit) in hits.iter().enumerate() {
        let doc = corpus
            .chunk(&hit.chunk_id)
            .map(|c| c.doc_key.to_string())
            .unwrap_or_default();
        println!("{}\t{}\t{:.6}\t{doc}", i + 1, hit.chunk_id, hit.score);
    }
    Ok(())
}

#[derive(Serialize)]
struct StrategyReport {
    strategy: String,
    config: StrategyConfig,
    metrics: StrategyMetrics,
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    #[serde(flatten)]
    run: RunInfo<'a>,
    k_max: usize,
    failure_cap: usize,
    cutoffs: &'a [usize],
    headline: Vec<HeadlineRow>,
    strategies: Vec<StrategyReport>,
}

pub fn eval(s: &Settings) -> Result<()> {
    let c = &s.config;
    let corpus = open_corpus(s)?;
    let encoder = build_encoder(s)?;
    let reformulator = build_reformulator(c, &corpus)?;
    let hints = SchemaHints::from_corpus(&corpus, HINT_EXAMPLES);
    let mut query_sets: BTreeMap<bool, Vec<EmbeddingVector>> = BTreeMap::new();
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut reports = Vec::new();
    let mut headline = Vec::new();
    for strategy in &c.strategies {
        let label = strategy.label();
        info!("evaluating {label}");
        let reformulated = strategy.variant.is_reformulated();
        let queries = match query_sets.entry(reformulated) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(embed_queries(
                &corpus,
                strategy,
                encoder.as_ref(),
                reformulator.as_ref(),
                &hints,
                c.max_in_flight,
            )?),
        };
        let bundle = build_bundle(&corpus, strategy, encoder.as_ref(), c.max_in_flight)?;
        let metrics = evaluate_strategy(&corpus, &bundle, queries, c.k_max, c.failure_cap)?;
        rows.extend(metric_rows(&label, &metrics));
        headline.extend(headline_rows(&label, &metrics, &c.cutoffs));
        reports.push(StrategyReport {
            strategy: label,
            config: strategy.clone(),
            metrics,
        });
    }
    let dir = out_dir(s)?;
    report::write_csv(&dir.join("metrics.csv"), &rows)?;
    let report = MetricsReport {
        run: run_info(s, &corpus, encoder.as_ref()),
        k_max: c.k_max,
        failure_cap: c.failure_cap,
        cutoffs: &c.cutoffs,
        headline,
        strategies: reports,
    };
    report::write_json(&dir.join("metrics.json"), &report)?;
    print_headline(&report.headline, &c.cutoffs);
    println!(
        "wrote {} metric rows to {}",
        rows.len(),
        dir.join("metrics.csv").display()
    );
    Ok(())
}

fn print_headline(rows: &[HeadlineRow], cutoffs: &[usize]) {
    for r in rows {
        let at: Vec<String> = ["context", "title"]
            .iter()
            .flat_map(|m| cutoffs.iter().map(move |k| format!("{m}@{k}")))
            .filter_map(|key| r.at_cutoffs.get(&key).map(|v| format!("{key}={v:.2}")))
            .collect();
        let rank = r.avg_matched_rank.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "{}\t{}\t{}\tavg_rank={rank}\tfailure={:.2}",
            r.strategy,
            r.category,
            at.join(" "),
            r.failure_rate
        );
    }
}

fn family_name(f: SweepFamily) -> &'static str {
    match f {
        SweepFamily::Unified => "unified",
        SweepFamily::LateFusion => "late_fusion",
    }
}

#[derive(Serialize)]
struct SweepReport<'a> {
    #[serde(flatten)]
    run: RunInfo<'a>,
    family: SweepFamily,
    k_max: usize,
    failure_cap: usize,
    rows: Vec<SweepRow>,
}

pub fn sweep(s: &Settings) -> Result<()> {
    let c = &s.config;
    let corpus = open_corpus(s)?;
    let encoder = build_encoder(s)?;
    let queries = plain_queries(s, &corpus, encoder.as_ref())?;
    let embeddings = embed_chunks(&corpus, encoder.as_ref(), &FieldMask::new(), true, c.max_in_flight)?;
    let family = c.sweep.family;
    let results = alpha_sweep(
        &corpus,
        &embeddings,
        &queries,
        family,
        &c.sweep.alphas,
        c.k_max,
        c.failure_cap,
    )?;
    let rows: Vec<_> = results
        .iter()
        .flat_map(|r| sweep_rows(family_name(family), r.alpha, &r.metrics))
        .collect();
    let dir = out_dir(s)?;
    report::write_csv(&dir.join("sweep.csv"), &rows)?;
    for (category, svg) in sweep_charts(&rows, c.sweep.chart_k)? {
        report::write_text(&dir.join(format!("sweep_{category}.svg")), &svg)?;
    }
    let k = c.sweep.chart_k;
    for r in &results {
        let at: Vec<String> = r
            .metrics
            .iter()
            .map(|(cat, m)| {
                format!(
                    "{cat}: context@{k}={:.2} title@{k}={:.2}",
                    m.context_at_k[&k], m.title_at_k[&k]
                )
            })
            .collect();
        println!("alpha={:.2}\t{}", r.alpha, at.join("\t"));
    }
    let report = SweepReport {
        run: run_info(s, &corpus, encoder.as_ref()),
        family,
        k_max: c.k_max,
        failure_cap: c.failure_cap,
        rows: results,
    };
    report::write_json(&dir.join("sweep.json"), &report)?;
    Ok(())
}

#[derive(Serialize)]
struct AblationEntry {
    condition: String,
    removed: FieldMask,
    metrics: StrategyMetrics,
}

#[derive(Serialize)]
struct AblationReport<'a> {
    #[serde(flatten)]
    run: RunInfo<'a>,
    variant: metaret::MatVariant,
    k_max: usize,
    failure_cap: usize,
    conditions: Vec<AblationEntry>,
}

pub fn ablate(s: &Settings) -> Result<()> {
    let c = &s.config;
    let corpus = open_corpus(s)?;
    let encoder = build_encoder(s)?;
    let queries = plain_queries(s, &corpus, encoder.as_ref())?;
    let conditions = c.ablation.conditions()?;
    let results = ablation_run(
        &corpus,
        encoder.as_ref(),
        &conditions,
        c.ablation.variant,
        &queries,
        c.k_max,
        c.failure_cap,
        c.max_in_flight,
    )?;
    let rows: Vec<MetricRow> = results
        .iter()
        .flat_map(|r| metric_rows(&r.condition, &r.metrics))
        .collect();
    let dir = out_dir(s)?;
    report::write_csv(&dir.join("ablation.csv"), &rows)?;
    for (metric, title, stem) in [
        (CONTEXT, "Context@K by condition", "context"),
        (TITLE, "Title@K by condition", "title"),
    ] {
        for (category, svg) in k_curve_charts(&rows, metric, title)? {
            report::write_text(&dir.join(format!("ablation_{stem}_{category}.svg")), &svg)?;
        }
    }
    for r in &results {
        for (cat, m) in &r.metrics {
            let k = 5.min(c.k_max);
            println!(
                "{}\t{cat}\tcontext@{k}={:.2}\ttitle@{k}={:.2}",
                r.condition, m.context_at_k[&k], m.title_at_k[&k]
            );
        }
    }
    let report = AblationReport {
        run: run_info(s, &corpus, encoder.as_ref()),
        variant: c.ablation.variant,
        k_max: c.k_max,
        failure_cap: c.failure_cap,
        conditions: results
            .into_iter()
            .zip(conditions)
            .map(|(r, cond)| AblationEntry {
                condition: r.condition,
                removed: cond.mask,
                metrics: r.metrics,
            })
            .collect(),
    };
    report::write_json(&dir.join("ablation.json"), &report)?;
    Ok(())
}

#[derive(Serialize)]
struct SeparationJson<'a> {
    #[serde(flatten)]
    run: RunInfo<'a>,
    sampling: metaret::eval::PairSampling,
    variants: Vec<VariantSeparation>,
    enriched_alpha: f64,
    propositions: PropositionReport,
}

pub fn analyze_space(s: &Settings) -> Result<()> {
    let c = &s.config;
    let a = &c.analysis;
    let corpus = open_corpus(s)?;
    let encoder = build_encoder(s)?;
    let embeddings = embed_chunks(&corpus, encoder.as_ref(), &FieldMask::new(), true, c.max_in_flight)?;
    let meta = embeddings.meta.as_ref().expect("requested metadata embeddings");
    let fuse = |alpha: f64| -> Result<Vec<EmbeddingVector>> {
        let w = FusionWeight::new(alpha)?;
        Ok(embeddings
            .text
            .iter()
            .zip(meta)
            .map(|(t, m)| fuse_unified(t, m, w))
            .collect::<Result<_, _>>()?)
    };
    let spaces: Vec<Vec<EmbeddingVector>> = a.variants.iter().map(|v| fuse(v.alpha)).collect::<Result<_>>()?;
    let named: Vec<(&str, &[EmbeddingVector])> = a
        .variants
        .iter()
        .zip(&spaces)
        .map(|(v, space)| (v.name.as_str(), space.as_slice()))
        .collect();
    let analysis = pair_analysis(&corpus, &named, a.sampling, c.seed, a.tail_threshold, a.bins)?;
    let queries = plain_queries(s, &corpus, encoder.as_ref())?;
    let enriched = fuse(a.enriched_alpha)?;
    let propositions = proposition_check(&corpus, &embeddings.text, &enriched, &queries, a.sampling, c.seed)?;

    let dir = out_dir(s)?;
    let sep_rows: Vec<_> = analysis
        .iter()
        .flat_map(|v| separation_rows(&v.variant, &v.report))
        .collect();
    let hist_rows: Vec<_> = analysis.iter().flat_map(histogram_rows).collect();
    report::write_csv(&dir.join("separation.csv"), &sep_rows)?;
    report::write_csv(&dir.join("histogram.csv"), &hist_rows)?;
    report::write_text(&dir.join("histogram.svg"), &histogram_chart(&hist_rows)?)?;
    for v in &analysis {
        let r = &v.report;
        println!(
            "{}\tmargin={:.4}\td={:.4}\tF={:.4}\tauc={:.4}\tks={:.4}\tpairs={}+{}",
            v.variant, r.mean_margin, r.cohens_d, r.fisher_f, r.auc, r.ks_distance, r.n_pos_pairs, r.n_neg_pairs
        );
    }
    println!(
        "enriched vs plain: intra_gain={:.4} inter_drop={:.4} variance_gain={:.6}",
        propositions.intra_gain, propositions.inter_drop, propositions.variance_gain
    );
    let report = SeparationJson {
        run: run_info(s, &corpus, encoder.as_ref()),
        sampling: a.sampling,
        variants: analysis,
        enriched_alpha: a.enriched_alpha,
        propositions,
    };
    report::write_json(&dir.join("separation.json"), &report)?;
    Ok(())
}
