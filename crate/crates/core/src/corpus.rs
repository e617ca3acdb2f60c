//! Metadata-annotated chunk corpora.
//!
//! A corpus is a JSONL file: a header line, then `chunk` and `query` records
//! discriminated by their `kind` key. Loading validates the flat metadata
//! schema, chunk/document consistency and query → chunk referential integrity.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;

/// Schema version written to (and required in) the header line.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("query `{query_id}` cites unknown chunk `{chunk_id}`")]
    DanglingReference { query_id: String, chunk_id: String },
    #[error("query `{query_id}` cites chunk `{chunk_id}` from {found}, expected target {target}")]
    TargetMismatch {
        query_id: String,
        chunk_id: String,
        found: Box<DocumentKey>,
        target: Box<DocumentKey>,
    },
    #[error("unknown metadata field `{key}`{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    UnknownField { key: String, line: Option<usize> },
    #[error("missing header line (expected {{\"kind\":\"header\",\"schema_version\":\"{SCHEMA_VERSION}\"}})")]
    MissingHeader,
    #[error("invalid chunking parameters: chunk_size {chunk_size} must exceed overlap {overlap}")]
    InvalidParams { chunk_size: usize, overlap: usize },
    #[error("invalid corpus: {0}")]
    Invalid(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One field of the flat metadata schema, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataField {
    CompanyName,
    FormType,
    Section,
    FiscalYearEnd,
    PeriodOfReport,
    FiledDate,
    ExchangeListings,
    SicCode,
}

/// Set of fields removed by an ablation.
pub type FieldMask = BTreeSet<MetadataField>;

impl MetadataField {
    pub const ALL: [MetadataField; 8] = [
        MetadataField::CompanyName,
        MetadataField::FormType,
        MetadataField::Section,
        MetadataField::FiscalYearEnd,
        MetadataField::PeriodOfReport,
        MetadataField::FiledDate,
        MetadataField::ExchangeListings,
        MetadataField::SicCode,
    ];

    /// Key used in corpus files.
    pub fn name(self) -> &'static str {
        match self {
            MetadataField::CompanyName => "company_name",
            MetadataField::FormType => "form_type",
            MetadataField::Section => "section",
            MetadataField::FiscalYearEnd => "fiscal_year_end",
            MetadataField::PeriodOfReport => "period_of_report",
            MetadataField::FiledDate => "filed_date",
            MetadataField::ExchangeListings => "exchange_listings",
            MetadataField::SicCode => "sic_code",
        }
    }

    /// Short key used in the serialized metadata header.
    pub fn header_key(self) -> &'static str {
        match self {
            MetadataField::CompanyName => "company",
            MetadataField::FormType => "form",
            MetadataField::Section => "section",
            MetadataField::FiscalYearEnd => "fiscal year end",
            MetadataField::PeriodOfReport => "period",
            MetadataField::FiledDate => "filed",
            MetadataField::ExchangeListings => "exchanges",
            MetadataField::SicCode => "sic",
        }
    }

    /// Every field: the mask that strips a record down to nothing.
    pub fn all_mask() -> FieldMask {
        Self::ALL.into_iter().collect()
    }
}

impl fmt::Display for MetadataField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetadataField {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Table-style spelling of the SIC field is accepted as well.
        if s == "SIC_code" {
            return Ok(MetadataField::SicCode);
        }
        MetadataField::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| CorpusError::UnknownField {
                key: s.to_string(),
                line: None,
            })
    }
}

/// Parses a list of field names into a mask, rejecting non-schema keys.
pub fn parse_mask<S: AsRef<str>>(names: &[S]) -> Result<FieldMask, CorpusError> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

/// Flat key-value metadata attached to a chunk. Absent fields are `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub company_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    /// `MM-DD`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiscal_year_end: Option<String>,
    /// `YYYY-MM-DD`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_of_report: Option<String>,
    /// `YYYY-MM-DD`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filed_date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange_listings: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "SIC_code")]
    pub sic_code: Option<String>,
}

impl MetadataRecord {
    pub fn is_empty(&self) -> bool {
        MetadataField::ALL.iter().all(|&f| !self.has(f))
    }

    pub fn has(&self, field: MetadataField) -> bool {
        match field {
            MetadataField::ExchangeListings => self.exchange_listings.is_some(),
            _ => self.text_field(field).is_some(),
        }
    }

    /// Value of a field rendered as a single string; list values are joined by `", "`.
    pub fn value(&self, field: MetadataField) -> Option<String> {
        match field {
            MetadataField::ExchangeListings => self.exchange_listings.as_ref().map(|v| v.join(", ")),
            _ => self.text_field(field).map(str::to_string),
        }
    }

    fn text_field(&self, field: MetadataField) -> Option<&str> {
        match field {
            MetadataField::CompanyName => self.company_name.as_deref(),
            MetadataField::FormType => self.form_type.as_deref(),
            MetadataField::Section => self.section.as_deref(),
            MetadataField::FiscalYearEnd => self.fiscal_year_end.as_deref(),
            MetadataField::PeriodOfReport => self.period_of_report.as_deref(),
            MetadataField::FiledDate => self.filed_date.as_deref(),
            MetadataField::SicCode => self.sic_code.as_deref(),
            MetadataField::ExchangeListings => None,
        }
    }

    pub fn remove(&mut self, field: MetadataField) {
        match field {
            MetadataField::CompanyName => self.company_name = None,
            MetadataField::FormType => self.form_type = None,
            MetadataField::Section => self.section = None,
            MetadataField::FiscalYearEnd => self.fiscal_year_end = None,
            MetadataField::PeriodOfReport => self.period_of_report = None,
            MetadataField::FiledDate => self.filed_date = None,
            MetadataField::ExchangeListings => self.exchange_listings = None,
            MetadataField::SicCode => self.sic_code = None,
        }
    }

    /// Year component of `period_of_report`, if present.
    pub fn report_year(&self) -> Option<&str> {
        self.period_of_report.as_deref().and_then(|p| p.get(..4))
    }

    /// Checks that present values are non-empty and dates follow their pattern.
    pub fn validate(&self) -> Result<(), String> {
        for field in MetadataField::ALL {
            if field == MetadataField::ExchangeListings {
                continue;
            }
            if let Some(v) = self.text_field(field) {
                if v.trim().is_empty() {
                    return Err(format!("field `{field}` is empty"));
                }
            }
        }
        if let Some(list) = &self.exchange_listings {
            if list.is_empty() || list.iter().any(|e| e.trim().is_empty()) {
                return Err("field `exchange_listings` is empty or has an empty entry".into());
            }
        }
        if let Some(v) = &self.fiscal_year_end {
            if !is_month_day(v) {
                return Err(format!("fiscal_year_end `{v}` is not MM-DD"));
            }
        }
        for (name, value) in [
            ("period_of_report", &self.period_of_report),
            ("filed_date", &self.filed_date),
        ] {
            if let Some(v) = value {
                if !is_iso_date(v) {
                    return Err(format!("{name} `{v}` is not YYYY-MM-DD"));
                }
            }
        }
        Ok(())
    }
}

fn is_iso_date(s: &str) -> bool {
    s.len() == 10 && NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
}

fn is_month_day(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 5 || b[2] != b'-' || !b[..2].iter().chain(&b[3..]).all(u8::is_ascii_digit) {
        return false;
    }
    let (m, d) = (s[..2].parse().unwrap_or(0), s[3..].parse().unwrap_or(0));
    // 2000 is a leap year, so 02-29 is accepted.
    NaiveDate::from_ymd_opt(2000, m, d).is_some()
}

/// Identity of a source document: one company's filing for one year.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentKey {
    pub company: String,
    pub year: String,
    pub form: String,
}

impl DocumentKey {
    pub fn new(company: impl Into<String>, year: impl Into<String>, form: impl Into<String>) -> Self {
        Self {
            company: company.into(),
            year: year.into(),
            form: form.into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.company.trim().is_empty() || self.form.trim().is_empty() {
            return Err(format!("document key {self} has an empty component"));
        }
        if self.year.len() != 4 || !self.year.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("document key year `{}` is not four digits", self.year));
        }
        Ok(())
    }
}

impl fmt::Display for DocumentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.company, self.year, self.form)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_key: DocumentKey,
    pub ordinal: u32,
    pub text: String,
    pub metadata: MetadataRecord,
}

impl Chunk {
    fn validate(&self) -> Result<(), String> {
        if self.chunk_id.trim().is_empty() {
            return Err("chunk_id is empty".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("chunk `{}` has empty text", self.chunk_id));
        }
        self.doc_key.validate()?;
        self.metadata.validate()?;
        if let Some(company) = &self.metadata.company_name {
            if company != &self.doc_key.company {
                return Err(format!(
                    "chunk `{}`: company_name `{company}` disagrees with doc_key {}",
                    self.chunk_id, self.doc_key
                ));
            }
        }
        if let Some(year) = self.metadata.report_year() {
            if year != self.doc_key.year {
                return Err(format!(
                    "chunk `{}`: period_of_report year {year} disagrees with doc_key {}",
                    self.chunk_id, self.doc_key
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryCategory {
    General,
    InDepth,
}

impl QueryCategory {
    pub const ALL: [QueryCategory; 2] = [QueryCategory::General, QueryCategory::InDepth];

    pub fn name(self) -> &'static str {
        match self {
            QueryCategory::General => "general",
            QueryCategory::InDepth => "in_depth",
        }
    }
}

impl fmt::Display for QueryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryCase {
    pub query_id: String,
    pub text: String,
    pub category: QueryCategory,
    pub target: DocumentKey,
    pub supporting_chunk_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header { schema_version: String },
    Chunk(Chunk),
    Query(QueryCase),
}

/// A validated, immutable corpus of chunks and query cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    schema_version: String,
    chunks: Vec<Chunk>,
    queries: Vec<QueryCase>,
    positions: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from in-memory records, checking every invariant.
    pub fn new(chunks: Vec<Chunk>, queries: Vec<QueryCase>) -> Result<Self, CorpusError> {
        let mut positions = HashMap::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            chunk.validate().map_err(CorpusError::Invalid)?;
            if positions.insert(chunk.chunk_id.clone(), i).is_some() {
                return Err(CorpusError::Invalid(format!("duplicate chunk_id `{}`", chunk.chunk_id)));
            }
        }
        for query in &queries {
            validate_query_shape(query).map_err(CorpusError::Invalid)?;
        }
        let corpus = Self {
            schema_version: SCHEMA_VERSION.to_string(),
            chunks,
            queries,
            positions,
        };
        corpus.check_references()?;
        Ok(corpus)
    }

    fn check_references(&self) -> Result<(), CorpusError> {
        for query in &self.queries {
            for id in &query.supporting_chunk_ids {
                let chunk = self.chunk(id).ok_or_else(|| CorpusError::DanglingReference {
                    query_id: query.query_id.clone(),
                    chunk_id: id.clone(),
                })?;
                if chunk.doc_key != query.target {
                    return Err(CorpusError::TargetMismatch {
                        query_id: query.query_id.clone(),
                        chunk_id: id.clone(),
                        found: Box::new(chunk.doc_key.clone()),
                        target: Box::new(query.target.clone()),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn schema_version(&self) -> &str {
        &self.schema_version
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn queries(&self) -> &[QueryCase] {
        &self.queries
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.positions.get(chunk_id).map(|&i| &self.chunks[i])
    }

    /// Row position of a chunk, i.e. its index in [`Corpus::chunks`].
    pub fn position(&self, chunk_id: &str) -> Option<usize> {
        self.positions.get(chunk_id).copied()
    }

    pub fn queries_in(&self, category: QueryCategory) -> impl Iterator<Item = &QueryCase> {
        self.queries.iter().filter(move |q| q.category == category)
    }

    /// Writes the corpus in the JSONL interchange format.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut buf = Vec::new();
        let mut push = |record: &Record| {
            serde_json::to_writer(&mut buf, record).expect("corpus records serialize");
            buf.push(b'\n');
        };
        push(&Record::Header {
            schema_version: self.schema_version.clone(),
        });
        for chunk in &self.chunks {
            push(&Record::Chunk(chunk.clone()));
        }
        for query in &self.queries {
            push(&Record::Query(query.clone()));
        }
        fsutil::write_atomic(path, &buf).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn validate_query_shape(query: &QueryCase) -> Result<(), String> {
    if query.query_id.trim().is_empty() {
        return Err("query_id is empty".into());
    }
    if query.text.trim().is_empty() {
        return Err(format!("query `{}` has empty text", query.query_id));
    }
    if query.supporting_chunk_ids.is_empty() {
        return Err(format!("query `{}` has no supporting chunks", query.query_id));
    }
    query.target.validate()
}

/// Loads and validates a JSONL corpus file. Record order is preserved.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);

    let mut header_seen = false;
    let mut chunks = Vec::new();
    let mut queries = Vec::new();
    let mut positions = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedRecord { line: line_no, reason };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let kind = value.get("kind").and_then(|k| k.as_str());
        if !header_seen {
            if kind != Some("header") {
                return Err(CorpusError::MissingHeader);
            }
        } else if kind == Some("header") {
            return Err(malformed("duplicate header".into()));
        }
        if kind == Some("chunk") {
            check_metadata_keys(&value, line_no)?;
        }
        let record: Record = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        match record {
            Record::Header { schema_version } => {
                if schema_version != SCHEMA_VERSION {
                    return Err(malformed(format!("unsupported schema_version `{schema_version}`")));
                }
                header_seen = true;
            }
            Record::Chunk(chunk) => {
                chunk.validate().map_err(malformed)?;
                if positions.insert(chunk.chunk_id.clone(), chunks.len()).is_some() {
                    return Err(malformed(format!("duplicate chunk_id `{}`", chunk.chunk_id)));
                }
                chunks.push(chunk);
            }
            Record::Query(query) => {
                validate_query_shape(&query).map_err(malformed)?;
                queries.push(query);
            }
        }
    }
    if !header_seen {
        return Err(CorpusError::MissingHeader);
    }
    let corpus = Corpus {
        schema_version: SCHEMA_VERSION.to_string(),
        chunks,
        queries,
        positions,
    };
    corpus.check_references()?;
    Ok(corpus)
}

fn check_metadata_keys(value: &serde_json::Value, line: usize) -> Result<(), CorpusError> {
    if let Some(meta) = value.get("metadata").and_then(|m| m.as_object()) {
        for key in meta.keys() {
            key.parse::<MetadataField>().map_err(|_| CorpusError::UnknownField {
                key: key.clone(),
                line: Some(line),
            })?;
        }
    }
    Ok(())
}

/// Splits text into whitespace-token windows of `chunk_size` tokens, each
/// window starting `chunk_size - overlap` tokens after the previous one.
///
/// Windows are re-joined with single spaces. The last window may be short.
/// Text without tokens yields no windows.
pub fn chunk_text(text: &str, chunk_size: usize, overlap: usize) -> Result<Vec<(usize, String)>, CorpusError> {
    if chunk_size <= overlap {
        return Err(CorpusError::InvalidParams { chunk_size, overlap });
    }
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let stride = chunk_size - overlap;
    let mut windows = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let end = (start + chunk_size).min(tokens.len());
        windows.push((windows.len(), tokens[start..end].join(" ")));
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    Ok(windows)
}

/// Copy of `record` with every masked field removed.
pub fn ablate_metadata(record: &MetadataRecord, mask: &FieldMask) -> MetadataRecord {
    let mut out = record.clone();
    for &field in mask {
        out.remove(field);
    }
    out
}

/// Name-based variant of [`ablate_metadata`]; non-schema names are rejected.
pub fn ablate_metadata_by_name<S: AsRef<str>>(
    record: &MetadataRecord,
    mask: &[S],
) -> Result<MetadataRecord, CorpusError> {
    Ok(ablate_metadata(record, &parse_mask(mask)?))
}
