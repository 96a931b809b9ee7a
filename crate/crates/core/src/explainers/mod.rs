//! Black-box explainers: a local linear surrogate, Shapley-value attribution
//! and anchor rules.
//!
//! All three work on the distinct token *types* of an instance. Masking a
//! type masks every occurrence of it. Attribution weights are oriented toward
//! the predicted class: a positive weight supports the prediction.

mod anchors;
mod klucb;
mod lime;
mod regression;
mod shap;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Instance;
use crate::model::{ModelError, ModelHandle};
use crate::text::{apply_mask, PerturbationStrategy, TextError};

pub use anchors::explain_anchors;
pub use klucb::{anchor_beta, kl_bernoulli, kl_lucb_bounds};
pub use lime::explain_lime;
pub use shap::{exact_shapley, explain_kernel_shap, shapley_kernel_weight};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("surrogate fit failed: {0}")]
    SurrogateFit(String),
    #[error("{n} token types exceed the exact Shapley limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("invalid explainer configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainerKind {
    Lime,
    Anchors,
    Shap,
}

impl ExplainerKind {
    pub const ALL: [ExplainerKind; 3] = [Self::Lime, Self::Anchors, Self::Shap];
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lime => "lime",
            Self::Anchors => "anchors",
            Self::Shap => "shap",
        })
    }
}

impl FromStr for ExplainerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lime" => Ok(Self::Lime),
            "anchors" | "anchor" => Ok(Self::Anchors),
            "shap" => Ok(Self::Shap),
            other => Err(format!("unknown explainer `{other}` (expected lime, anchors or shap)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationItem {
    pub token: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRule {
    pub predicate_tokens: Vec<String>,
    pub precision_estimate: f64,
    pub precision_lower_bound: f64,
    pub coverage_estimate: f64,
}

fn certified_default() -> bool {
    true
}

/// Output of one explainer on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub instance_id: String,
    pub explainer: ExplainerKind,
    pub predicted_label: u8,
    pub items: Vec<ExplanationItem>,
    /// Rule precision for anchors, 1.0 for attribution methods.
    pub confidence: f64,
    #[serde(rename = "samples_used")]
    pub sample_budget_used: usize,
    /// False when the anchor search ran out of budget before certifying.
    #[serde(default = "certified_default")]
    pub certified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorRule>,
}

impl Explanation {
    pub fn weight_of(&self, token: &str) -> Option<f64> {
        self.items.iter().find(|i| i.token == token).map(|i| i.weight)
    }
}

pub fn write_explanations<W: Write>(explanations: &[Explanation], mut out: W) -> std::io::Result<()> {
    for e in explanations {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_explanations<R: BufRead>(input: R) -> Result<Vec<Explanation>, String> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Hyperparameters shared by the explainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerConfig {
    pub num_samples: usize,
    pub kernel_width_sigma: f64,
    pub ridge_lambda: f64,
    pub shap_exact_threshold: usize,
    pub anchor_tau: f64,
    pub anchor_delta: f64,
    pub beam_width: usize,
    /// Perturbations drawn per arm pull in the anchor search.
    pub anchor_batch_size: usize,
    pub anchor_lucb_epsilon: f64,
    pub anchor_lucb_max_rounds: usize,
    /// Total model evaluations the anchor search may spend.
    pub anchor_max_samples: usize,
    pub seed: u64,
    #[serde(skip)]
    pub perturbation: PerturbationStrategy,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            num_samples: 1000,
            kernel_width_sigma: 25.0,
            ridge_lambda: 1.0,
            shap_exact_threshold: 12,
            anchor_tau: 0.95,
            anchor_delta: 0.1,
            beam_width: 4,
            anchor_batch_size: 10,
            anchor_lucb_epsilon: 0.1,
            anchor_lucb_max_rounds: 50,
            anchor_max_samples: 10_000,
            seed: 0,
            perturbation: PerturbationStrategy::default(),
        }
    }
}

impl ExplainerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ExplainError> {
        let bad = |m: &str| Err(ExplainError::Config(m.to_string()));
        if self.num_samples == 0
            || self.beam_width == 0
            || self.anchor_batch_size == 0
            || self.anchor_max_samples == 0
        {
            return bad("sample budgets and beam width must be at least 1");
        }
        if !(self.anchor_tau > 0.0 && self.anchor_tau < 1.0) {
            return bad("anchor_tau must lie in (0, 1)");
        }
        if !(self.anchor_delta > 0.0 && self.anchor_delta < 1.0) {
            return bad("anchor_delta must lie in (0, 1)");
        }
        if !(self.kernel_width_sigma > 0.0) || !(self.ridge_lambda > 0.0) {
            return bad("kernel width and ridge penalty must be positive");
        }
        if self.shap_exact_threshold > 20 {
            return bad("shap_exact_threshold above 20 would enumerate over a million coalitions");
        }
        Ok(())
    }
}

pub fn explain(
    kind: ExplainerKind,
    model: &ModelHandle,
    instance: &Instance,
    cfg: &ExplainerConfig,
) -> Result<Explanation, ExplainError> {
    match kind {
        ExplainerKind::Lime => explain_lime(model, instance, cfg),
        ExplainerKind::Anchors => explain_anchors(model, instance, cfg),
        ExplainerKind::Shap => explain_kernel_shap(model, instance, cfg),
    }
}

/// Interpretable features of an instance: its distinct token types.
pub(crate) struct Features<'a> {
    instance: &'a Instance,
    types: Vec<String>,
    /// Feature index of every token position.
    feature_of: Vec<usize>,
}

impl<'a> Features<'a> {
    pub(crate) fn new(instance: &'a Instance) -> Self {
        let types = instance.token_types();
        let feature_of = instance
            .tokens
            .iter()
            .map(|t| types.iter().position(|ty| *ty == t.normalized).expect("type of token"))
            .collect();
        Self {
            instance,
            types,
            feature_of,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.types.len()
    }

    pub(crate) fn types(&self) -> &[String] {
        &self.types
    }

    /// Renders the sentence with features where `keep` is false perturbed.
    /// Stochastic strategies draw from an RNG keyed by `(seed, keep)`, so the
    /// same coalition always renders the same text.
    pub(crate) fn render(
        &self,
        keep: &[bool],
        strategy: &PerturbationStrategy,
        seed: u64,
    ) -> Result<String, TextError> {
        let positions: Vec<bool> = self.feature_of.iter().map(|&f| keep[f]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed(seed, keep));
        apply_mask(&self.instance.tokens, &positions, strategy, &mut rng)
    }

    pub(crate) fn render_all<'m, I>(
        &self,
        masks: I,
        strategy: &PerturbationStrategy,
        seed: u64,
    ) -> Result<Vec<String>, TextError>
    where
        I: IntoIterator<Item = &'m Vec<bool>>,
    {
        masks
            .into_iter()
            .map(|m| self.render(m, strategy, seed))
            .collect()
    }
}

fn mask_seed(seed: u64, keep: &[bool]) -> u64 {
    // FNV-1a over the mask bits, folded with the seed through splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in keep {
        h ^= u64::from(b) + 1;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn orient(predicted_label: u8, weight: f64) -> f64 {
    if predicted_label == 1 {
        weight
    } else {
        -weight
    }
}
