//! Grouped five-number summaries of per-instance scores.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::faithfulness::FaithfulnessRecord;
use crate::metrics::MetricsRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupField {
    Model,
    Explainer,
    Epsilon,
    Mode,
    Difficulty,
}

impl GroupField {
    pub fn name(self) -> &'static str {
        match self {
            Self::Model => "model",
            Self::Explainer => "explainer",
            Self::Epsilon => "epsilon",
            Self::Mode => "mode",
            Self::Difficulty => "difficulty",
        }
    }
}

impl fmt::Display for GroupField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model" => Ok(Self::Model),
            "explainer" => Ok(Self::Explainer),
            "epsilon" => Ok(Self::Epsilon),
            "mode" => Ok(Self::Mode),
            "difficulty" => Ok(Self::Difficulty),
            other => Err(format!("unknown grouping field `{other}`")),
        }
    }
}

/// A row that can be grouped and summarized.
pub trait SummaryRow {
    /// Value of a grouping field; `None` when the row has no such field.
    fn field(&self, field: GroupField) -> Option<String>;
    /// Named scores, `None` where undefined.
    fn scores(&self) -> Vec<(&'static str, Option<f64>)>;
}

fn epsilon_label(epsilon: Option<f64>) -> String {
    epsilon.map(|e| e.to_string()).unwrap_or_default()
}

impl SummaryRow for MetricsRecord {
    fn field(&self, field: GroupField) -> Option<String> {
        Some(match field {
            GroupField::Model => self.model.clone(),
            GroupField::Explainer => self.explainer.to_string(),
            GroupField::Epsilon => epsilon_label(self.epsilon),
            GroupField::Mode => self.mode.to_string(),
            GroupField::Difficulty => self.difficulty.to_string(),
        })
    }

    fn scores(&self) -> Vec<(&'static str, Option<f64>)> {
        MetricsRecord::scores(self).to_vec()
    }
}

impl SummaryRow for FaithfulnessRecord {
    fn field(&self, field: GroupField) -> Option<String> {
        match field {
            GroupField::Model => Some(self.model.clone()),
            GroupField::Explainer => Some(self.explainer.to_string()),
            GroupField::Epsilon => Some(epsilon_label(self.epsilon)),
            GroupField::Mode | GroupField::Difficulty => None,
        }
    }

    fn scores(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("accuracy_on_rationales", Some(self.accuracy_on_rationales)),
            ("baseline_accuracy", Some(self.baseline_accuracy)),
            ("delta", Some(self.delta)),
        ]
    }
}

/// Five-number summary and mean of the defined values of one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    /// Defined values summarized.
    pub n: usize,
    /// Undefined values skipped.
    pub undefined: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

/// Quantile of sorted data by linear interpolation between closest ranks:
/// position `p * (n - 1)`, so the median of an even count is the midpoint
/// of the two central values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Distribution {
    pub fn of(values: &[Option<f64>]) -> Self {
        let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
        defined.sort_by(f64::total_cmp);
        let undefined = values.len() - defined.len();
        if defined.is_empty() {
            return Self {
                n: 0,
                undefined,
                min: None,
                q1: None,
                median: None,
                q3: None,
                max: None,
                mean: None,
            };
        }
        let at = |p| Some(quantile(&defined, p));
        Self {
            n: defined.len(),
            undefined,
            min: defined.first().copied(),
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: defined.last().copied(),
            mean: Some(defined.iter().sum::<f64>() / defined.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub key: BTreeMap<String, String>,
    pub count: usize,
    pub scores: BTreeMap<String, Distribution>,
}

/// Groups rows by the listed fields, in ascending key order, and summarizes
/// every score. With no rows, a single empty group of count 0 is returned.
pub fn summarize<R: SummaryRow>(rows: &[R], group_by: &[GroupField]) -> Vec<GroupSummary> {
    if rows.is_empty() {
        return vec![GroupSummary {
            key: BTreeMap::new(),
            count: 0,
            scores: BTreeMap::new(),
        }];
    }
    let mut groups: BTreeMap<Vec<Option<String>>, Vec<&R>> = BTreeMap::new();
    for row in rows {
        let key = group_by.iter().map(|&f| row.field(f)).collect();
        groups.entry(key).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|(key, members)| {
            let mut columns: BTreeMap<&'static str, Vec<Option<f64>>> = BTreeMap::new();
            for row in &members {
                for (name, value) in row.scores() {
                    columns.entry(name).or_default().push(value);
                }
            }
            GroupSummary {
                key: group_by
                    .iter()
                    .zip(key)
                    .filter_map(|(f, v)| v.map(|v| (f.name().to_string(), v)))
                    .collect(),
                count: members.len(),
                scores: columns
                    .into_iter()
                    .map(|(name, values)| (name.to_string(), Distribution::of(&values)))
                    .collect(),
            }
        })
        .collect()
}
