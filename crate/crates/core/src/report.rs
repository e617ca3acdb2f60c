//! CSV / JSON output and SVG charts.
//!
//! Charts are drawn from parsed CSV rows only, never from in-memory results,
//! so a chart can always be regenerated from the CSV next to it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{SeparationReport, StrategyMetrics, VariantSeparation};
use crate::fsutil::write_atomic;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("nothing to chart: {0}")]
    Empty(String),
}

/// One metric value. `k` is the cutoff for `context@k` / `title@k` and the
/// failure cap for `avg_matched_rank` / `failure_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub strategy: String,
    pub category: String,
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    /// Empty for an average rank with no matched query.
    pub value: Option<f64>,
}

pub const CONTEXT: &str = "context@k";
pub const TITLE: &str = "title@k";
pub const AVG_RANK: &str = "avg_matched_rank";
pub const FAILURE: &str = "failure_rate";

/// `2·k_max + 2` rows per category.
pub fn metric_rows(strategy: &str, metrics: &StrategyMetrics) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (category, m) in metrics {
        let row = |metric: &str, k: usize, value: Option<f64>| MetricRow {
            strategy: strategy.to_string(),
            category: category.name().to_string(),
            metric: metric.to_string(),
            k,
            value,
        };
        rows.extend(m.context_at_k.iter().map(|(&k, &v)| row(CONTEXT, k, Some(v))));
        rows.extend(m.title_at_k.iter().map(|(&k, &v)| row(TITLE, k, Some(v))));
        rows.push(row(AVG_RANK, m.failure_cap, m.avg_matched_rank));
        rows.push(row(FAILURE, m.failure_cap, Some(m.failure_rate)));
    }
    rows
}

/// Metric rows of an α-sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub family: String,
    pub alpha: f64,
    pub category: String,
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub value: Option<f64>,
}

pub fn sweep_rows(family: &str, alpha: f64, metrics: &StrategyMetrics) -> Vec<SweepCsvRow> {
    metric_rows(family, metrics)
        .into_iter()
        .map(|r| SweepCsvRow {
            family: r.strategy,
            alpha,
            category: r.category,
            metric: r.metric,
            k: r.k,
            value: r.value,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationCsvRow {
    pub variant: String,
    pub metric: String,
    pub value: f64,
}

pub fn separation_rows(variant: &str, r: &SeparationReport) -> Vec<SeparationCsvRow> {
    [
        ("mean_margin", r.mean_margin),
        ("cohens_d", r.cohens_d),
        ("fisher_f", r.fisher_f),
        ("auc", r.auc),
        ("ks_distance", r.ks_distance),
        ("tail_pos", r.tail_pos),
        ("tail_neg", r.tail_neg),
        ("n_pos_pairs", r.n_pos_pairs as f64),
        ("n_neg_pairs", r.n_neg_pairs as f64),
        ("tail_threshold", r.tail_threshold),
    ]
    .into_iter()
    .map(|(metric, value)| SeparationCsvRow {
        variant: variant.to_string(),
        metric: metric.to_string(),
        value,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCsvRow {
    pub variant: String,
    /// `pos` or `neg`
    pub stratum: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub share: f64,
}

pub fn histogram_rows(v: &VariantSeparation) -> Vec<HistogramCsvRow> {
    let h = &v.histogram;
    let mut rows = Vec::new();
    for (stratum, shares) in [("pos", &h.pos), ("neg", &h.neg)] {
        for (i, &share) in shares.iter().enumerate() {
            rows.push(HistogramCsvRow {
                variant: v.variant.clone(),
                stratum: stratum.to_string(),
                bin_lo: h.edges[i],
                bin_hi: h.edges[i + 1],
                share,
            });
        }
    }
    rows
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io {
        path: PathBuf::from("<memory>"),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

pub fn parse_csv<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, ReportError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(Into::into)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    write_text(path, &csv_string(rows)?)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    parse_csv(&std::fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Atomic write of a text file.
pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

/// Headline row for one strategy and category at chosen cutoffs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadlineRow {
    pub strategy: String,
    pub category: String,
    #[serde(flatten)]
    pub at_cutoffs: BTreeMap<String, f64>,
    pub avg_matched_rank: Option<f64>,
    pub failure_rate: f64,
}

/// Context@K and Title@K at each cutoff plus the two depth metrics.
/// Cutoffs above the evaluated `k_max` are skipped.
pub fn headline_rows(strategy: &str, metrics: &StrategyMetrics, cutoffs: &[usize]) -> Vec<HeadlineRow> {
    metrics
        .iter()
        .map(|(category, m)| {
            let mut at = BTreeMap::new();
            for &k in cutoffs {
                if let (Some(c), Some(t)) = (m.context_at_k.get(&k), m.title_at_k.get(&k)) {
                    at.insert(format!("context@{k}"), *c);
                    at.insert(format!("title@{k}"), *t);
                }
            }
            HeadlineRow {
                strategy: strategy.to_string(),
                category: category.name().to_string(),
                at_cutoffs: at,
                avg_matched_rank: m.avg_matched_rank,
                failure_rate: m.failure_rate,
            }
        })
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        LEFT + (x - self.x0) / span * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        H - BOTTOM - (y - self.y0) / span * (H - TOP - BOTTOM)
    }
}

fn open_svg(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (W - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[f64], x_label: &str, y_label: &str) {
    let (l, r, b, t) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(out, r#"<path d="M{l},{t} V{b} H{r}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let y = f.y0 + (f.y1 - f.y0) * f64::from(i) / 4.0;
        let py = f.py(y);
        let _ = writeln!(
            out,
            r##"<line x1="{l}" y1="{py:.1}" x2="{r}" y2="{py:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            l - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    for &x in x_ticks {
        let px = f.px(x);
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#,
            b + 16.0,
            fmt_tick(x)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y,
            escape(name)
        );
    }
}

/// Line chart with a fixed y range.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, y_range: (f64, f64), series: &[Series]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let x0 = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x1 = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1) = if xs.is_empty() { (0.0, 1.0) } else { (x0, x1) };
    let frame = Frame {
        x0,
        x1,
        y0: y_range.0,
        y1: y_range.1,
    };
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    let mut out = String::new();
    open_svg(&mut out, title);
    axes(&mut out, &frame, &ticks, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                frame.px(x),
                frame.py(y)
            );
        }
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Grouped bar chart: one group per label, one bar per series in each group.
pub fn grouped_bar_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    labels: &[String],
    series: &[(String, Vec<f64>)],
) -> String {
    let y1 = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let frame = Frame {
        x0: 0.0,
        x1: labels.len() as f64,
        y0: 0.0,
        y1,
    };
    let mut out = String::new();
    open_svg(&mut out, title);
    axes(&mut out, &frame, &[], x_label, y_label);
    let group_w = (W - LEFT - RIGHT) / labels.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, label) in labels.iter().enumerate() {
        let gx = LEFT + group_w * g as f64 + group_w * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let top = frame.py(v);
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{top:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"/>"#,
                gx + bar_w * s as f64,
                H - BOTTOM - top,
                PALETTE[s % PALETTE.len()]
            );
        }
        if labels.len() <= 12 || g % (labels.len() / 10).max(1) == 0 {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                gx + group_w * 0.4,
                H - BOTTOM + 16.0,
                escape(label)
            );
        }
    }
    legend(&mut out, &series.iter().map(|s| s.0.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

fn category_of<'a>(rows: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in rows {
        if !out.iter().any(|x| x == c) {
            out.push(c.to_string());
        }
    }
    out
}

/// Per category: Context@K or Title@K against K, one line per strategy
/// (or ablation condition).
pub fn k_curve_charts(rows: &[MetricRow], metric: &str, title: &str) -> Result<Vec<(String, String)>, ReportError> {
    let categories = category_of(rows.iter().map(|r| r.category.as_str()));
    let mut charts = Vec::new();
    for category in categories {
        let mut by_strategy: Vec<Series> = Vec::new();
        for r in rows.iter().filter(|r| r.category == category && r.metric == metric) {
            let Some(v) = r.value else { continue };
            match by_strategy.iter_mut().find(|s| s.name == r.strategy) {
                Some(s) => s.points.push((r.k as f64, v)),
                None => by_strategy.push(Series {
                    name: r.strategy.clone(),
                    points: vec![(r.k as f64, v)],
                }),
            }
        }
        if by_strategy.is_empty() {
            return Err(ReportError::Empty(format!("{metric} rows for {category}")));
        }
        let label = if metric == CONTEXT {
            "Context@K (%)"
        } else {
            "Title@K (%)"
        };
        charts.push((
            category.clone(),
            line_chart(&format!("{title} ({category})"), "K", label, (0.0, 100.0), &by_strategy),
        ));
    }
    Ok(charts)
}

/// Per category: Context@K, Title@K and failure rate against α.
pub fn sweep_charts(rows: &[SweepCsvRow], k: usize) -> Result<Vec<(String, String)>, ReportError> {
    let categories = category_of(rows.iter().map(|r| r.category.as_str()));
    let mut charts = Vec::new();
    for category in categories {
        let pick = |metric: &str, at: Option<usize>| -> Vec<(f64, f64)> {
            rows.iter()
                .filter(|r| r.category == category && r.metric == metric && at.is_none_or(|k| r.k == k))
                .filter_map(|r| r.value.map(|v| (r.alpha, v)))
                .collect()
        };
        let series = vec![
            Series {
                name: format!("Context@{k}"),
                points: pick(CONTEXT, Some(k)),
            },
            Series {
                name: format!("Title@{k}"),
                points: pick(TITLE, Some(k)),
            },
            Series {
                name: "Failure rate".into(),
                points: pick(FAILURE, None),
            },
        ];
        if series.iter().all(|s| s.points.is_empty()) {
            return Err(ReportError::Empty(format!("sweep rows for {category}")));
        }
        let family = rows.first().map(|r| r.family.as_str()).unwrap_or("");
        charts.push((
            category.clone(),
            line_chart(
                &format!("{family} sweep ({category})"),
                "alpha",
                "%",
                (0.0, 100.0),
                &series,
            ),
        ));
    }
    Ok(charts)
}

/// Positive and negative pair-similarity distributions, grouped by bin.
pub fn histogram_chart(rows: &[HistogramCsvRow]) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty("histogram rows".into()));
    }
    let mut labels: Vec<(f64, f64)> = Vec::new();
    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    for r in rows {
        if !labels.contains(&(r.bin_lo, r.bin_hi)) {
            labels.push((r.bin_lo, r.bin_hi));
        }
    }
    labels.sort_by(|a, b| a.0.total_cmp(&b.0));
    for r in rows {
        let name = format!("{} {}", r.variant, r.stratum);
        let idx = match series.iter().position(|s| s.0 == name) {
            Some(i) => i,
            None => {
                series.push((name, vec![0.0; labels.len()]));
                series.len() - 1
            }
        };
        let bin = labels.iter().position(|l| *l == (r.bin_lo, r.bin_hi)).unwrap();
        series[idx].1[bin] = r.share;
    }
    let text_labels: Vec<String> = labels.iter().map(|l| fmt_tick(l.0)).collect();
    Ok(grouped_bar_chart(
        "Pair cosine similarity by stratum",
        "cosine (bin start)",
        "share of pairs",
        &text_labels,
        &series,
    ))
}
