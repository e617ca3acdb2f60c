//! Query rewriting that makes company and year constraints explicit.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::corpus::{Corpus, MetadataField};

static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{4})\b").unwrap());

/// Metadata schema summary handed to reformulators: which fields the corpus
/// uses and a few example values for each.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SchemaHints {
    pub fields: Vec<MetadataField>,
    pub examples: BTreeMap<String, Vec<String>>,
}

impl SchemaHints {
    /// Up to `per_field` distinct values per field, in first-seen order.
    pub fn from_corpus(corpus: &Corpus, per_field: usize) -> Self {
        let mut hints = SchemaHints::default();
        for field in MetadataField::ALL {
            let mut values: Vec<String> = Vec::new();
            let mut present = false;
            for chunk in corpus.chunks() {
                if let Some(v) = chunk.metadata.value(field) {
                    present = true;
                    if values.len() < per_field && !values.contains(&v) {
                        values.push(v);
                    }
                }
            }
            if present {
                hints.fields.push(field);
                hints.examples.insert(field.name().to_string(), values);
            }
        }
        hints
    }
}

pub trait Reformulator: Send + Sync {
    /// Returns the rewritten query. Implementations never fail; a failing
    /// backend degrades to a simpler rewrite.
    fn reformulate(&self, query: &str, hints: &SchemaHints) -> String;
}

impl<R: Reformulator + ?Sized> Reformulator for &R {
    fn reformulate(&self, query: &str, hints: &SchemaHints) -> String {
        (**self).reformulate(query, hints)
    }
}

impl<R: Reformulator + ?Sized> Reformulator for Box<R> {
    fn reformulate(&self, query: &str, hints: &SchemaHints) -> String {
        (**self).reformulate(query, hints)
    }
}

pub fn reformulate_query(query: &str, hints: &SchemaHints, reformulator: &dyn Reformulator) -> String {
    reformulator.reformulate(query, hints)
}

/// Leaves queries untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReformulator;

impl Reformulator for IdentityReformulator {
    fn reformulate(&self, query: &str, _hints: &SchemaHints) -> String {
        query.to_string()
    }
}

/// Parses `alias<TAB>canonical` lines. Blank lines and `#` comments are skipped.
pub fn parse_alias_table(text: &str) -> Result<Vec<(String, String)>, RetrievalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (alias, canonical) = line.split_once('\t').ok_or_else(|| RetrievalError::AliasTable {
            line: i + 1,
            reason: "expected `alias<TAB>canonical`".into(),
        })?;
        let (alias, canonical) = (alias.trim(), canonical.trim());
        if alias.is_empty() || canonical.is_empty() {
            return Err(RetrievalError::AliasTable {
                line: i + 1,
                reason: "empty alias or canonical name".into(),
            });
        }
        out.push((alias.to_string(), canonical.to_string()));
    }
    Ok(out)
}

/// Detects a company alias and a four-digit year and appends them as an
/// explicit `company: X; year: Y` line. Queries with neither are unchanged.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedReformulator {
    /// Lowercased alias to canonical name, longest alias first.
    aliases: Vec<(String, String)>,
}

impl RuleBasedReformulator {
    pub fn new<I, A, C>(aliases: I) -> Self
    where
        I: IntoIterator<Item = (A, C)>,
        A: Into<String>,
        C: Into<String>,
    {
        let mut r = Self::default();
        r.extend(aliases);
        r
    }

    pub fn from_alias_file(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path).map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::new(parse_alias_table(&text)?))
    }

    /// Aliases derived from the corpus: every company name maps to itself,
    /// and its first word does too when no other company shares it.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut names: Vec<String> = Vec::new();
        for c in corpus.chunks() {
            if let Some(name) = &c.metadata.company_name {
                if !names.contains(name) {
                    names.push(name.clone());
                }
            }
        }
        let mut first_words: HashMap<String, Vec<&String>> = HashMap::new();
        for name in &names {
            if let Some(w) = name.split_whitespace().next() {
                first_words.entry(w.to_lowercase()).or_default().push(name);
            }
        }
        let mut aliases: Vec<(String, String)> = names.iter().map(|n| (n.clone(), n.clone())).collect();
        for (word, owners) in first_words {
            if let [only] = owners.as_slice() {
                aliases.push((word, (*only).clone()));
            }
        }
        Self::new(aliases)
    }

    pub fn extend<I, A, C>(&mut self, aliases: I)
    where
        I: IntoIterator<Item = (A, C)>,
        A: Into<String>,
        C: Into<String>,
    {
        for (a, c) in aliases {
            let a = a.into().to_lowercase();
            let c = c.into();
            if let Some(slot) = self.aliases.iter_mut().find(|(x, _)| *x == a) {
                slot.1 = c;
            } else {
                self.aliases.push((a, c));
            }
        }
        self.aliases
            .sort_by(|x, y| y.0.len().cmp(&x.0.len()).then_with(|| x.0.cmp(&y.0)));
    }

    pub fn detect_company(&self, query: &str) -> Option<&str> {
        let lower = query.to_lowercase();
        self.aliases
            .iter()
            .find(|(alias, _)| contains_word(&lower, alias))
            .map(|(_, canonical)| canonical.as_str())
    }

    pub fn detect_year(query: &str) -> Option<&str> {
        YEAR.captures(query).map(|c| c.get(1).unwrap().as_str())
    }
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    haystack.match_indices(needle).any(|(i, m)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + m.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

impl Reformulator for RuleBasedReformulator {
    fn reformulate(&self, query: &str, _hints: &SchemaHints) -> String {
        let mut parts = Vec::new();
        if let Some(company) = self.detect_company(query) {
            parts.push(format!("company: {company}"));
        }
        if let Some(year) = Self::detect_year(query) {
            parts.push(format!("year: {year}"));
        }
        if parts.is_empty() {
            query.to_string()
        } else {
            format!("{query}\n{}", parts.join("; "))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteReformulatorConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Serialize)]
struct RewriteRequest<'a> {
    query: &'a str,
    schema: Vec<&'static str>,
    examples: &'a BTreeMap<String, Vec<String>>,
    model: &'a str,
}

#[derive(Deserialize)]
struct RewriteResponse {
    rewritten: String,
}

/// Asks an HTTP service to rewrite the query. Any failure is logged and the
/// rule-based rewrite is used instead.
pub struct RemoteReformulator {
    config: RemoteReformulatorConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    fallback: RuleBasedReformulator,
}

impl RemoteReformulator {
    pub fn new(config: RemoteReformulatorConfig, api_key: Option<String>, fallback: RuleBasedReformulator) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
            fallback,
        }
    }

    fn try_remote(&self, query: &str, hints: &SchemaHints) -> Result<String, String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = RewriteRequest {
            query,
            schema: hints.fields.iter().map(|f| f.name()).collect(),
            examples: &hints.examples,
            model: &self.config.model,
        };
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(format!("status {status}"));
        }
        let parsed: RewriteResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        if parsed.rewritten.trim().is_empty() {
            return Err("empty rewrite".into());
        }
        Ok(parsed.rewritten)
    }
}

impl Reformulator for RemoteReformulator {
    fn reformulate(&self, query: &str, hints: &SchemaHints) -> String {
        match self.try_remote(query, hints) {
            Ok(q) => q,
            Err(e) => {
                log::warn!("remote reformulation failed ({e}); using rule-based rewrite");
                self.fallback.reformulate(query, hints)
            }
        }
    }
}
