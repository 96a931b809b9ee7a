//! The evaluation matrix: every model × explainer over a corpus, scored for
//! plausibility and faithfulness, with summary tables.

mod run;
mod summary;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AggregationMode, CorpusError};
use crate::explainers::{ExplainError, ExplainerConfig, ExplainerKind};
use crate::faithfulness::{FaithfulnessError, Reference};
use crate::metrics::{Denominators, EpsilonScale, WeightNorm};
use crate::model::ModelError;
use crate::text::{PerturbationKind, PerturbationStrategy, PosLexicon};

pub use run::{instance_seed, run_matrix, Manifest, ModelInfo, SkipRecord};
pub use summary::{summarize, Distribution, GroupField, GroupSummary, SummaryRow};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "RATIONEVAL_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Faithfulness(#[from] FaithfulnessError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Whether the failure lies in the user's input rather than at run time.
    pub fn is_validation(&self) -> bool {
        match self {
            Self::Config(_) => true,
            Self::Corpus(e) => e.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub strategy: PerturbationKind,
    pub unk_token: String,
    /// Tagged word lists, required by `pos_preserving`.
    pub pos_lexicon: Option<PathBuf>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            strategy: PerturbationKind::UnkReplace,
            unk_token: "UNK".into(),
            pos_lexicon: None,
        }
    }
}

impl PerturbationConfig {
    pub fn build(&self) -> Result<PerturbationStrategy, HarnessError> {
        let lexicon = match (&self.pos_lexicon, self.strategy) {
            (Some(path), _) => {
                let source =
                    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                Some(PosLexicon::parse(&source).map_err(|e| {
                    HarnessError::Config(format!("{}: {e}", path.display()))
                })?)
            }
            (None, PerturbationKind::PosPreserving) => {
                return Err(HarnessError::Config(
                    "pos_preserving perturbation needs a pos_lexicon".into(),
                ))
            }
            (None, _) => None,
        };
        Ok(PerturbationStrategy {
            kind: self.strategy,
            unk_token: self.unk_token.clone(),
            pos_lexicon: lexicon,
        })
    }
}

/// Confidence thresholds swept per explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonGrids {
    pub lime: Vec<f64>,
    pub shap: Vec<f64>,
    /// Anchors carry no threshold; must stay empty.
    pub anchors: Vec<f64>,
}

impl Default for EpsilonGrids {
    fn default() -> Self {
        Self {
            lime: vec![0.1, 0.2, 0.3],
            shap: vec![0.1, 0.2, 0.3, 0.5],
            anchors: Vec::new(),
        }
    }
}

impl EpsilonGrids {
    /// Thresholds evaluated for `kind`: `[None]` for anchors, `[Some(0)]`
    /// when a weighted explainer has an empty grid.
    pub fn points(&self, kind: ExplainerKind) -> Vec<Option<f64>> {
        let grid = match kind {
            ExplainerKind::Anchors => return vec![None],
            ExplainerKind::Lime => &self.lime,
            ExplainerKind::Shap => &self.shap,
        };
        if grid.is_empty() {
            vec![Some(0.0)]
        } else {
            grid.iter().copied().map(Some).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub weight_norm: WeightNorm,
    pub epsilon_scale: EpsilonScale,
    pub reference: Reference,
    pub denominators: Denominators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Model specs: `builtin-nb:<train.jsonl>`, `cmd:<command>` or `http:<url>`.
    pub models: Vec<String>,
    #[serde(default = "all_explainers")]
    pub explainers: Vec<ExplainerKind>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default = "all_modes")]
    pub modes: Vec<AggregationMode>,
    /// Difficulty levels to keep; empty keeps all.
    #[serde(default)]
    pub difficulties: Vec<u8>,
    /// Score difficulty-4 sentences for plausibility as well.
    #[serde(default)]
    pub plausibility_include_context: bool,
    #[serde(default = "unit_alpha")]
    pub smoothing_alpha: f64,
    #[serde(default)]
    pub lenient: bool,
    #[serde(default)]
    pub explainer: ExplainerConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub epsilon: EpsilonGrids,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

fn all_explainers() -> Vec<ExplainerKind> {
    ExplainerKind::ALL.to_vec()
}

fn all_modes() -> Vec<AggregationMode> {
    AggregationMode::ALL.to_vec()
}

fn one() -> usize {
    1
}

fn unit_alpha() -> f64 {
    1.0
}

impl RunConfig {
    /// Parses a TOML config; relative paths resolve against `base`.
    pub fn from_toml(source: &str, base: &Path) -> Result<Self, HarnessError> {
        let mut cfg: RunConfig =
            toml::from_str(source).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.dataset = base.join(&cfg.dataset);
        cfg.output_dir = base.join(&cfg.output_dir);
        if let Some(lexicon) = &cfg.perturbation.pos_lexicon {
            cfg.perturbation.pos_lexicon = Some(base.join(lexicon));
        }
        for spec in cfg.models.iter_mut() {
            if let Some(path) = spec.strip_prefix("builtin-nb:") {
                *spec = format!("builtin-nb:{}", base.join(path).display());
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let source = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&source, base)
    }

    /// Applies the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(value) = std::env::var(SEED_ENV) {
            self.seed = value
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={value} is not a u64")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.explainers.is_empty() {
            return bad("at least one explainer is required".into());
        }
        if self.modes.is_empty() {
            return bad("at least one aggregation mode is required".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !self.epsilon.anchors.is_empty() {
            return bad("anchors take no thresholds; epsilon.anchors must be empty".into());
        }
        for eps in self.epsilon.lime.iter().chain(&self.epsilon.shap) {
            if !(eps.is_finite() && *eps >= 0.0) {
                return bad(format!("threshold {eps} is not a non-negative number"));
            }
        }
        if let Some(d) = self.difficulties.iter().find(|d| !(1..=4).contains(*d)) {
            return bad(format!("difficulty {d} outside 1..=4"));
        }
        self.explainer.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration. The output directory and
    /// thread count do not change results and are left out.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(fields) = value.as_object_mut() {
            fields.remove("output_dir");
            fields.remove("parallelism");
        }
        let canonical = serde_json::to_vec(&value).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
