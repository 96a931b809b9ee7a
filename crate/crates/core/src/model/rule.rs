//! Deterministic toy classifiers with known ground-truth attributions.

use super::{Classifier, ModelError};
use crate::text::normalize;

/// Positive iff the text contains `keyword` (case-insensitive, whole token).
#[derive(Debug, Clone)]
pub struct KeywordClassifier {
    keyword: String,
}

impl KeywordClassifier {
    pub fn new(keyword: &str) -> Self {
        Self {
            keyword: normalize(keyword),
        }
    }
}

impl Classifier for KeywordClassifier {
    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>, ModelError> {
        Ok(texts
            .iter()
            .map(|t| {
                let hit = t.split_whitespace().any(|w| normalize(w) == self.keyword);
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Ignores its input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub f64);

impl Classifier for ConstantClassifier {
    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>, ModelError> {
        Ok(vec![self.0; texts.len()])
    }
}
