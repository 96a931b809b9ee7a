//! Rationale-only re-prediction: keep just the tokens an explanation selects,
//! feed them back to the model and measure accuracy.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Instance;
use crate::explainers::{ExplainerKind, Explanation};
use crate::metrics::{selected_tokens, EpsilonScale};
use crate::model::{label_of, ModelError, ModelHandle};

#[derive(Debug, Error)]
pub enum FaithfulnessError {
    #[error("no (instance, explanation) pairs to evaluate")]
    Empty,
    #[error("explanation for `{explanation}` paired with instance `{instance}`")]
    Mismatch { instance: String, explanation: String },
    #[error("pairs mix explainers {0} and {1}")]
    MixedExplainers(ExplainerKind, ExplainerKind),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What a rationale-only prediction is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// The annotated label.
    #[default]
    Gold,
    /// The model's own prediction on the full sentence.
    Model,
}

impl FromStr for Reference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(Self::Gold),
            "model" | "fidelity" => Ok(Self::Model),
            other => Err(format!("unknown reference `{other}`")),
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gold => "gold",
            Self::Model => "model",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessRecord {
    pub model: String,
    pub explainer: ExplainerKind,
    /// `None` for anchors, which take no threshold.
    pub epsilon: Option<f64>,
    pub accuracy_on_rationales: f64,
    pub baseline_accuracy: f64,
    pub delta: f64,
    pub num_instances: usize,
    pub num_empty_rationales: usize,
}

/// The sentence restricted to the token types `explanation` selects at
/// `epsilon`: every occurrence, in sentence order, joined by single spaces.
pub fn rationale_only_text(
    instance: &Instance,
    explanation: &Explanation,
    epsilon: f64,
    scale: EpsilonScale,
) -> String {
    let keep: BTreeSet<String> = selected_tokens(explanation, epsilon, scale);
    instance
        .tokens
        .iter()
        .filter(|t| keep.contains(&t.normalized))
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Predicted labels on the full sentences.
pub fn full_sentence_labels(
    model: &ModelHandle,
    instances: &[&Instance],
) -> Result<Vec<u8>, ModelError> {
    let texts: Vec<String> = instances.iter().map(|i| i.text.clone()).collect();
    Ok(model.predict_batch(&texts)?.into_iter().map(label_of).collect())
}

fn check_pairs(pairs: &[(&Instance, &Explanation)]) -> Result<ExplainerKind, FaithfulnessError> {
    let first = pairs.first().ok_or(FaithfulnessError::Empty)?.1.explainer;
    for (inst, e) in pairs {
        if inst.id != e.instance_id {
            return Err(FaithfulnessError::Mismatch {
                instance: inst.id.clone(),
                explanation: e.instance_id.clone(),
            });
        }
        if e.explainer != first {
            return Err(FaithfulnessError::MixedExplainers(first, e.explainer));
        }
    }
    Ok(first)
}

fn fraction(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

/// Scores one threshold given the model's full-sentence labels for the same
/// instances, so a sweep predicts the baseline only once.
pub fn accuracy_at(
    model: &ModelHandle,
    pairs: &[(&Instance, &Explanation)],
    full_labels: &[u8],
    epsilon: f64,
    scale: EpsilonScale,
    reference: Reference,
) -> Result<FaithfulnessRecord, FaithfulnessError> {
    let explainer = check_pairs(pairs)?;
    assert_eq!(full_labels.len(), pairs.len(), "one full-sentence label per pair");
    let texts: Vec<String> = pairs
        .iter()
        .map(|(inst, e)| rationale_only_text(inst, e, epsilon, scale))
        .collect();
    let empty = texts.iter().filter(|t| t.is_empty()).count();
    let labels: Vec<u8> = model.predict_batch(&texts)?.into_iter().map(label_of).collect();

    let target = |k: usize| match reference {
        Reference::Gold => pairs[k].0.gold_label,
        Reference::Model => full_labels[k],
    };
    let n = pairs.len();
    let on_rationales = fraction((0..n).filter(|&k| labels[k] == target(k)).count(), n);
    let baseline = fraction((0..n).filter(|&k| full_labels[k] == target(k)).count(), n);
    Ok(FaithfulnessRecord {
        model: model.name().to_string(),
        explainer,
        epsilon: (explainer != ExplainerKind::Anchors).then_some(epsilon),
        accuracy_on_rationales: on_rationales,
        baseline_accuracy: baseline,
        delta: on_rationales - baseline,
        num_instances: n,
        num_empty_rationales: empty,
    })
}

pub fn faithfulness_accuracy(
    model: &ModelHandle,
    pairs: &[(&Instance, &Explanation)],
    epsilon: f64,
    scale: EpsilonScale,
    reference: Reference,
) -> Result<FaithfulnessRecord, FaithfulnessError> {
    check_pairs(pairs)?;
    let instances: Vec<&Instance> = pairs.iter().map(|(i, _)| *i).collect();
    let full = full_sentence_labels(model, &instances)?;
    accuracy_at(model, pairs, &full, epsilon, scale, reference)
}

/// Column header of a threshold cell, e.g. `lime@0.1`; anchors have one
/// column named after the explainer.
pub fn cell_column(explainer: ExplainerKind, epsilon: Option<f64>) -> String {
    match epsilon {
        Some(eps) => format!("{explainer}@{eps}"),
        None => explainer.to_string(),
    }
}

/// Writes one row per model: the baseline accuracy followed by one column
/// per explainer and threshold, in the order the records first name them
/// after sorting explainers lime, anchors, shap and thresholds ascending.
pub fn write_table<W: Write>(records: &[FaithfulnessRecord], out: W) -> Result<(), csv::Error> {
    let mut cells: Vec<(ExplainerKind, Option<f64>)> = Vec::new();
    for r in records {
        if !cells.contains(&(r.explainer, r.epsilon)) {
            cells.push((r.explainer, r.epsilon));
        }
    }
    let rank = |k: ExplainerKind| ExplainerKind::ALL.iter().position(|&x| x == k);
    cells.sort_by(|a, b| {
        rank(a.0)
            .cmp(&rank(b.0))
            .then(a.1.unwrap_or(0.0).total_cmp(&b.1.unwrap_or(0.0)))
    });
    let mut models: Vec<&str> = Vec::new();
    for r in records {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }

    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["model".to_string(), "baseline".to_string()];
    header.extend(cells.iter().map(|&(k, e)| cell_column(k, e)));
    writer.write_record(&header)?;
    for model in models {
        let of_model: Vec<&FaithfulnessRecord> =
            records.iter().filter(|r| r.model == model).collect();
        let mut row = vec![
            model.to_string(),
            of_model[0].baseline_accuracy.to_string(),
        ];
        row.extend(cells.iter().map(|&(k, e)| {
            of_model
                .iter()
                .find(|r| r.explainer == k && r.epsilon == e)
                .map(|r| r.accuracy_on_rationales.to_string())
                .unwrap_or_default()
        }));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_records<W: Write>(records: &[FaithfulnessRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
