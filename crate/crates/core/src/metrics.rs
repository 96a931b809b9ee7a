//! Plausibility scores: precision, recall and fallout of an explanation's
//! token set `E` against a human rationale `L` within the sentence's token
//! types `S`, plus their weighted variants.
//!
//! Scores are `Option<f64>`; `None` marks an undefined ratio (empty `E`,
//! empty `L`, or `S == L`) and is never collapsed into a number.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AggregationMode, Instance};
use crate::explainers::{ExplainerKind, Explanation};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("token `{0}` is not part of the sentence")]
    OutsideSentence(String),
    #[error("weight {weight} for `{token}` is not positive")]
    NonPositiveWeight { token: String, weight: f64 },
    #[error("explanation has no non-zero weight")]
    EmptyWeights,
}

pub type Score = Option<f64>;

fn ratio(num: f64, den: usize) -> Score {
    (den > 0).then(|| num / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plausibility {
    pub precision: Score,
    pub recall: Score,
    pub fallout: Score,
}

fn check_subset<'a, I: IntoIterator<Item = &'a String>>(
    words: I,
    sentence: &BTreeSet<String>,
) -> Result<(), MetricsError> {
    match words.into_iter().find(|w| !sentence.contains(*w)) {
        Some(w) => Err(MetricsError::OutsideSentence(w.clone())),
        None => Ok(()),
    }
}

pub fn plausibility(
    explanation: &BTreeSet<String>,
    rationale: &BTreeSet<String>,
    sentence: &BTreeSet<String>,
) -> Result<Plausibility, MetricsError> {
    check_subset(explanation, sentence)?;
    check_subset(rationale, sentence)?;
    let hits = explanation.intersection(rationale).count();
    let false_hits = explanation.len() - hits;
    let non_relevant = sentence.len() - rationale.len();
    Ok(Plausibility {
        precision: ratio(hits as f64, explanation.len()),
        recall: ratio(hits as f64, rationale.len()),
        fallout: ratio(false_hits as f64, non_relevant),
    })
}

/// Token types with positive weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedSet {
    elements: BTreeMap<String, f64>,
}

impl WeightedSet {
    pub fn new(elements: BTreeMap<String, f64>) -> Result<Self, MetricsError> {
        if let Some((token, &weight)) = elements.iter().find(|(_, w)| !(**w > 0.0)) {
            return Err(MetricsError::NonPositiveWeight {
                token: token.clone(),
                weight,
            });
        }
        Ok(Self { elements })
    }

    pub fn uniform<'a, I: IntoIterator<Item = &'a String>>(tokens: I) -> Self {
        Self {
            elements: tokens.into_iter().map(|t| (t.clone(), 1.0)).collect(),
        }
    }

    pub fn get(&self, token: &str) -> Option<f64> {
        self.elements.get(token).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.elements.keys()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Weighted cardinality of the elements selected by `keep`.
    fn mass<F: Fn(&str) -> bool>(&self, keep: F) -> f64 {
        self.elements
            .iter()
            .filter(|(k, _)| keep(k))
            .fold(0.0, |acc, (_, w)| acc + w)
    }
}

/// Denominators of weighted recall and fallout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominators {
    /// Plain counts `|L|` and `|S-L|`.
    #[default]
    Unweighted,
    /// Weighted cardinalities, where tokens outside the explanation count
    /// with unit weight: `|L∩E|_W + |L-E|`, and likewise for `S-L`.
    Weighted,
}

impl FromStr for Denominators {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unweighted" => Ok(Self::Unweighted),
            "weighted" => Ok(Self::Weighted),
            other => Err(format!("unknown denominators `{other}`")),
        }
    }
}

impl fmt::Display for Denominators {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unweighted => "unweighted",
            Self::Weighted => "weighted",
        })
    }
}

pub fn weighted_plausibility(
    explanation: &WeightedSet,
    rationale: &BTreeSet<String>,
    sentence: &BTreeSet<String>,
) -> Result<Plausibility, MetricsError> {
    weighted_plausibility_with(explanation, rationale, sentence, Denominators::Unweighted)
}

pub fn weighted_plausibility_with(
    explanation: &WeightedSet,
    rationale: &BTreeSet<String>,
    sentence: &BTreeSet<String>,
    denominators: Denominators,
) -> Result<Plausibility, MetricsError> {
    check_subset(explanation.keys(), sentence)?;
    check_subset(rationale, sentence)?;
    let total = explanation.mass(|_| true);
    let hits = explanation.mass(|k| rationale.contains(k));
    let false_hits = explanation.mass(|k| !rationale.contains(k));
    let non_relevant = sentence.len() - rationale.len();
    let (recall, fallout) = match denominators {
        Denominators::Unweighted => (ratio(hits, rationale.len()), ratio(false_hits, non_relevant)),
        Denominators::Weighted => {
            let in_e = |k: &String| explanation.get(k).is_some();
            let missed = rationale.iter().filter(|k| !in_e(k)).count();
            let rejected = sentence
                .iter()
                .filter(|k| !rationale.contains(*k) && !in_e(k))
                .count();
            // Positive whenever the unweighted count is: every token either
            // carries positive weight or counts as one.
            (
                (!rationale.is_empty()).then(|| hits / (hits + missed as f64)),
                (non_relevant > 0).then(|| false_hits / (false_hits + rejected as f64)),
            )
        }
    };
    Ok(Plausibility {
        precision: (!explanation.is_empty()).then(|| hits / total),
        recall,
        fallout,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightNorm {
    #[default]
    Max,
    None,
}

impl FromStr for WeightNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::Max),
            "none" | "raw" => Ok(Self::None),
            other => Err(format!("unknown weight normalization `{other}`")),
        }
    }
}

impl fmt::Display for WeightNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::None => "none",
        })
    }
}

/// Weight magnitudes of an explanation, optionally divided by the largest
/// magnitude. Zero weights are dropped.
pub fn explanation_to_weighted_set(
    explanation: &Explanation,
    norm: WeightNorm,
) -> Result<WeightedSet, MetricsError> {
    weighted_set_of(explanation.items.iter().map(|i| (&i.token, i.weight)), norm)
}

fn weighted_set_of<'a, I>(items: I, norm: WeightNorm) -> Result<WeightedSet, MetricsError>
where
    I: IntoIterator<Item = (&'a String, f64)>,
{
    let raw: Vec<(&String, f64)> = items
        .into_iter()
        .map(|(t, w)| (t, w.abs()))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let max = raw.iter().map(|(_, w)| *w).fold(0.0, f64::max);
    if raw.is_empty() || !(max > 0.0) {
        return Err(MetricsError::EmptyWeights);
    }
    let scale = match norm {
        WeightNorm::Max => max,
        WeightNorm::None => 1.0,
    };
    WeightedSet::new(raw.into_iter().map(|(t, w)| (t.clone(), w / scale)).collect())
}

/// Whether the ε threshold compares raw weight magnitudes or magnitudes
/// divided by the explanation's largest one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonScale {
    #[default]
    Raw,
    Max,
}

/// Token types an explanation retrieves at threshold `epsilon`. Anchors
/// ignore the threshold.
pub fn selected_tokens(
    explanation: &Explanation,
    epsilon: f64,
    scale: EpsilonScale,
) -> BTreeSet<String> {
    if explanation.explainer == ExplainerKind::Anchors {
        return explanation.items.iter().map(|i| i.token.clone()).collect();
    }
    let divisor = match scale {
        EpsilonScale::Raw => 1.0,
        EpsilonScale::Max => explanation
            .items
            .iter()
            .map(|i| i.weight.abs())
            .fold(0.0, f64::max),
    };
    explanation
        .items
        .iter()
        .filter(|i| {
            let w = if divisor > 0.0 { i.weight.abs() / divisor } else { 0.0 };
            w >= epsilon
        })
        .map(|i| i.token.clone())
        .collect()
}

/// One row of metrics output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub instance_id: String,
    pub model: String,
    pub explainer: ExplainerKind,
    /// Threshold applied to build `E`; empty for anchors.
    pub epsilon: Option<f64>,
    pub mode: AggregationMode,
    pub difficulty: u8,
    pub precision: Score,
    pub recall: Score,
    pub fallout: Score,
    pub precision_w: Score,
    pub recall_w: Score,
    pub fallout_w: Score,
    pub size_e: usize,
    pub size_l: usize,
    pub size_s: usize,
    pub size_le: usize,
}

impl MetricsRecord {
    pub const COLUMNS: [&'static str; 16] = [
        "instance_id",
        "model",
        "explainer",
        "epsilon",
        "mode",
        "difficulty",
        "precision",
        "recall",
        "fallout",
        "precision_w",
        "recall_w",
        "fallout_w",
        "size_e",
        "size_l",
        "size_s",
        "size_le",
    ];

    pub fn scores(&self) -> [(&'static str, Score); 6] {
        [
            ("precision", self.precision),
            ("recall", self.recall),
            ("fallout", self.fallout),
            ("precision_w", self.precision_w),
            ("recall_w", self.recall_w),
            ("fallout_w", self.fallout_w),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MetricsOptions {
    pub weight_norm: WeightNorm,
    pub epsilon_scale: EpsilonScale,
    pub denominators: Denominators,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            weight_norm: WeightNorm::Max,
            epsilon_scale: EpsilonScale::Raw,
            denominators: Denominators::Unweighted,
        }
    }
}

/// Scores an explanation against one aggregation of the instance's
/// rationales.
pub fn score_explanation(
    model: &str,
    instance: &Instance,
    explanation: &Explanation,
    rationale: &BTreeSet<String>,
    mode: AggregationMode,
    epsilon: Option<f64>,
    options: MetricsOptions,
) -> Result<MetricsRecord, MetricsError> {
    let sentence = instance.token_type_set();
    let retrieved = selected_tokens(explanation, epsilon.unwrap_or(0.0), options.epsilon_scale);
    let plain = plausibility(&retrieved, rationale, &sentence)?;
    let selected_items = explanation
        .items
        .iter()
        .filter(|i| retrieved.contains(&i.token))
        .map(|i| (&i.token, i.weight));
    let weighted = match weighted_set_of(selected_items, options.weight_norm) {
        Ok(set) => weighted_plausibility_with(&set, rationale, &sentence, options.denominators)?,
        Err(MetricsError::EmptyWeights) => weighted_plausibility_with(
            &WeightedSet::default(),
            rationale,
            &sentence,
            options.denominators,
        )?,
        Err(e) => return Err(e),
    };
    Ok(MetricsRecord {
        instance_id: instance.id.clone(),
        model: model.to_string(),
        explainer: explanation.explainer,
        epsilon: if explanation.explainer == ExplainerKind::Anchors {
            None
        } else {
            epsilon
        },
        mode,
        difficulty: instance.difficulty,
        precision: plain.precision,
        recall: plain.recall,
        fallout: plain.fallout,
        precision_w: weighted.precision,
        recall_w: weighted.recall,
        fallout_w: weighted.fallout,
        size_e: retrieved.len(),
        size_l: rationale.len(),
        size_s: sentence.len(),
        size_le: retrieved.intersection(rationale).count(),
    })
}

pub fn write_metrics_csv<W: std::io::Write>(
    records: &[MetricsRecord],
    out: W,
) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    if records.is_empty() {
        writer.write_record(MetricsRecord::COLUMNS)?;
    }
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRecord>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
