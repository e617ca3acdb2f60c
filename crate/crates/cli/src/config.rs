//! TOML run configuration. Structured settings (strategies, α grids, ablation
//! masks) live here; paths and the seed can be overridden from the command line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use metaret::encoder::RemoteConfig;
use metaret::eval::{
    canonical_conditions, default_alphas, AblationCondition, PairSampling, SweepFamily, DEFAULT_FAILURE_CAP,
    DEFAULT_K_MAX, DEFAULT_TAIL_THRESHOLD,
};
use metaret::retrieval::{BaseStrategy, RemoteReformulatorConfig, StrategyConfig};
use metaret::{corpus::parse_mask, MatVariant};
use serde::Deserialize;

use crate::Invalid;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// `test` or `remote:<model>`.
    pub encoder: String,
    pub cache: Option<PathBuf>,
    pub max_in_flight: usize,
    pub k_max: usize,
    pub failure_cap: usize,
    /// Cutoffs reported in the headline table of `metrics.json`.
    pub cutoffs: Vec<usize>,
    pub strategies: Vec<StrategyConfig>,
    pub remote: RemoteOverrides,
    pub reformulator: ReformulatorConfig,
    pub sweep: SweepConfig,
    pub ablation: AblationConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            out: PathBuf::from("out"),
            seed: 0,
            encoder: "test".into(),
            cache: None,
            max_in_flight: 8,
            k_max: DEFAULT_K_MAX,
            failure_cap: DEFAULT_FAILURE_CAP,
            cutoffs: vec![1, 3, 5, 10],
            strategies: default_strategies(),
            remote: RemoteOverrides::default(),
            reformulator: ReformulatorConfig::default(),
            sweep: SweepConfig::default(),
            ablation: AblationConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn default_strategies() -> Vec<StrategyConfig> {
    let half = 0.5;
    vec![
        StrategyConfig::plain(),
        StrategyConfig::new(BaseStrategy::MatPrefix),
        StrategyConfig::new(BaseStrategy::unified(half).expect("valid weight")),
        StrategyConfig::new(BaseStrategy::late_fusion(half).expect("valid weight")),
    ]
}

/// Settings layered over the model defaults for `remote:<model>`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteOverrides {
    pub endpoint: Option<String>,
    pub dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_attempts: Option<u32>,
    pub initial_backoff_ms: Option<u64>,
    pub timeout_secs: Option<u64>,
}

impl RemoteOverrides {
    pub fn apply(&self, model: &str) -> RemoteConfig {
        let mut c = RemoteConfig::for_model(model);
        if let Some(e) = &self.endpoint {
            c.endpoint = e.clone();
        }
        if let Some(d) = self.dim {
            c.dim = d;
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(a) = self.max_attempts {
            c.max_attempts = a;
        }
        if let Some(ms) = self.initial_backoff_ms {
            c.initial_backoff = Duration::from_millis(ms);
        }
        if let Some(s) = self.timeout_secs {
            c.timeout = Duration::from_secs(s);
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReformulatorKind {
    Identity,
    #[default]
    RuleBased,
    Remote,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReformulatorConfig {
    pub kind: ReformulatorKind,
    /// Tab-separated `alias<TAB>canonical company name` lines.
    pub alias_file: Option<PathBuf>,
    pub remote: Option<RemoteReformulatorConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub family: SweepFamily,
    pub alphas: Vec<f64>,
    /// Cutoff plotted in the sweep charts.
    pub chart_k: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            family: SweepFamily::LateFusion,
            alphas: default_alphas(),
            chart_k: 5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub name: String,
    #[serde(default)]
    pub mask: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub variant: MatVariant,
    /// Empty means the four canonical conditions.
    pub conditions: Vec<ConditionSpec>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variant: MatVariant::Prefix,
            conditions: Vec::new(),
        }
    }
}

impl AblationConfig {
    pub fn conditions(&self) -> Result<Vec<AblationCondition>, Invalid> {
        if self.conditions.is_empty() {
            return Ok(canonical_conditions());
        }
        self.conditions
            .iter()
            .map(|c| {
                let mask = parse_mask(&c.mask).map_err(|e| Invalid(format!("ablation condition `{}`: {e}", c.name)))?;
                Ok(AblationCondition::new(c.name.clone(), mask))
            })
            .collect()
    }
}

/// An embedding variant for the separation analysis: the unified fusion of
/// text and metadata embeddings at `alpha` (1.0 is the plain text embedding).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceVariant {
    pub name: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub variants: Vec<SpaceVariant>,
    /// Fusion weight of the enriched space in the cohesion/confusion/variance check.
    pub enriched_alpha: f64,
    pub sampling: PairSampling,
    pub tail_threshold: f64,
    pub bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            variants: vec![
                SpaceVariant {
                    name: "plain".into(),
                    alpha: 1.0,
                },
                SpaceVariant {
                    name: "unified(0.5)".into(),
                    alpha: 0.5,
                },
            ],
            enriched_alpha: 0.5,
            sampling: PairSampling::default(),
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
            bins: 40,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Invalid> {
        let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())))
    }

    /// Checks everything that can be checked without touching the corpus.
    pub fn validate(&self) -> Result<(), Invalid> {
        if self.k_max == 0 || self.failure_cap < self.k_max {
            return Err(Invalid(format!(
                "need 1 <= k_max <= failure_cap (k_max = {}, failure_cap = {})",
                self.k_max, self.failure_cap
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Invalid("max_in_flight must be positive".into()));
        }
        if self.strategies.is_empty() {
            return Err(Invalid("no strategies configured".into()));
        }
        let mut labels = BTreeSet::new();
        for s in &self.strategies {
            if !labels.insert(s.label()) {
                return Err(Invalid(format!("strategy {} is listed twice", s.label())));
            }
        }
        if self.sweep.alphas.is_empty() || self.sweep.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Invalid("sweep.alphas must be a non-empty list within [0, 1]".into()));
        }
        if self.sweep.chart_k == 0 || self.sweep.chart_k > self.k_max {
            return Err(Invalid(format!("sweep.chart_k must lie in 1..={}", self.k_max)));
        }
        let a = &self.analysis;
        if a.variants.is_empty() {
            return Err(Invalid("analysis.variants is empty".into()));
        }
        let alphas = a.variants.iter().map(|v| v.alpha).chain([a.enriched_alpha]);
        if alphas.into_iter().any(|x| !(0.0..=1.0).contains(&x)) {
            return Err(Invalid("analysis weights must lie within [0, 1]".into()));
        }
        if a.bins == 0 {
            return Err(Invalid("analysis.bins must be positive".into()));
        }
        self.ablation.conditions()?;
        if let Some(alias) = &self.reformulator.alias_file {
            if !alias.is_file() {
                return Err(Invalid(format!("alias file {} not found", alias.display())));
            }
        }
        if self.reformulator.kind == ReformulatorKind::Remote && self.reformulator.remote.is_none() {
            return Err(Invalid(
                "reformulator.kind = \"remote\" needs a [reformulator.remote] table".into(),
            ));
        }
        Ok(())
    }
}
