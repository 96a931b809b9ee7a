//! Multinomial Naive Bayes over normalized token types, used as the
//! reference classifier when no external model is supplied.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{Backend, Classifier, ModelError, ModelHandle};
use crate::text::normalize;

#[derive(Debug, Clone)]
pub struct BuiltinClassifier {
    vocabulary: HashMap<String, usize>,
    log_priors: [f64; 2],
    log_likelihoods: Vec<[f64; 2]>,
    smoothing_alpha: f64,
}

impl BuiltinClassifier {
    pub fn train(corpus: &[(String, u8)], alpha: f64) -> Result<Self, ModelError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ModelError::Training(format!(
                "smoothing alpha must be positive, got {alpha}"
            )));
        }
        let mut docs = [0usize; 2];
        for (_, label) in corpus {
            match label {
                0 | 1 => docs[*label as usize] += 1,
                other => return Err(ModelError::Training(format!("label {other} is not 0 or 1"))),
            }
        }
        if docs[0] == 0 || docs[1] == 0 {
            return Err(ModelError::Training(
                "training corpus must contain both labels".into(),
            ));
        }

        let types: BTreeSet<String> = corpus
            .iter()
            .flat_map(|(text, _)| text.split_whitespace().map(normalize))
            .collect();
        let vocabulary: HashMap<String, usize> =
            types.into_iter().enumerate().map(|(i, w)| (w, i)).collect();

        let mut counts = vec![[0usize; 2]; vocabulary.len()];
        let mut totals = [0usize; 2];
        for (text, label) in corpus {
            for word in text.split_whitespace() {
                counts[vocabulary[&normalize(word)]][*label as usize] += 1;
                totals[*label as usize] += 1;
            }
        }

        let n_docs = (docs[0] + docs[1]) as f64;
        let v = vocabulary.len() as f64;
        let log_priors = [
            (docs[0] as f64 / n_docs).ln(),
            (docs[1] as f64 / n_docs).ln(),
        ];
        let log_likelihoods = counts
            .iter()
            .map(|c| {
                [0, 1].map(|k| ((c[k] as f64 + alpha) / (totals[k] as f64 + alpha * v)).ln())
            })
            .collect();
        Ok(Self {
            vocabulary,
            log_priors,
            log_likelihoods,
            smoothing_alpha: alpha,
        })
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    pub fn log_priors(&self) -> [f64; 2] {
        self.log_priors
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// Per-occurrence log-odds (positive minus negative) contributed by a
    /// token type, or `None` for out-of-vocabulary words.
    pub fn token_log_odds(&self, word: &str) -> Option<f64> {
        self.vocabulary
            .get(&normalize(word))
            .map(|&i| self.log_likelihoods[i][1] - self.log_likelihoods[i][0])
    }

    pub fn log_odds(&self, text: &str) -> f64 {
        // Counts are accumulated per vocabulary index and summed in index
        // order, so the result does not depend on word order.
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for word in text.split_whitespace() {
            if let Some(&i) = self.vocabulary.get(&normalize(word)) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let mut acc = self.log_priors[1] - self.log_priors[0];
        for (i, n) in counts {
            let ll = self.log_likelihoods[i];
            acc += f64::from(n) * (ll[1] - ll[0]);
        }
        acc
    }

    pub fn predict_proba(&self, text: &str) -> f64 {
        sigmoid(self.log_odds(text))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Classifier for BuiltinClassifier {
    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>, ModelError> {
        Ok(texts.iter().map(|t| self.predict_proba(t)).collect())
    }
}

pub fn train_builtin(corpus: &[(String, u8)], alpha: f64) -> Result<ModelHandle, ModelError> {
    let clf = BuiltinClassifier::train(corpus, alpha)?;
    Ok(ModelHandle::new(
        "builtin-nb",
        Backend::Builtin,
        ("negative".into(), "positive".into()),
        clf,
    ))
}

#[derive(Deserialize)]
struct TrainingRow {
    text: String,
    label: u8,
}

/// Reads `(text, label)` pairs from JSONL. Other fields are ignored, so a
/// corpus file works as training data.
pub fn load_training_file(path: &Path) -> Result<Vec<(String, u8)>, ModelError> {
    let source = std::fs::read_to_string(path)?;
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<TrainingRow>(line)
                .map(|r| (r.text, r.label))
                .map_err(|e| ModelError::Training(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
