//! Black-box access to the classifier under explanation.
//!
//! Every backend reduces to one contract: a batch of texts maps to the
//! probability of the positive class for each text, in order. The predicted
//! label is `1` iff that probability is at least `0.5`.

mod builtin;
mod external;
mod rule;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub use builtin::{load_training_file, train_builtin, BuiltinClassifier};
pub use external::{
    open_external, open_external_with, ExternalOptions, HttpClassifier, Message,
    SubprocessClassifier, PROTOCOL_VERSION,
};
pub use rule::{ConstantClassifier, KeywordClassifier};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("model startup failed: {0}")]
    Startup(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("invalid model spec `{0}` (expected builtin-nb:<file>, cmd:<command> or http:<url>)")]
    Spec(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Builtin,
    Subprocess,
    Http,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Builtin => "builtin",
            Backend::Subprocess => "subprocess",
            Backend::Http => "http",
        })
    }
}

/// A binary text classifier returning the positive-class probability.
pub trait Classifier: Send + Sync {
    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>, ModelError>;
}

pub fn label_of(p_positive: f64) -> u8 {
    u8::from(p_positive >= 0.5)
}

/// Shared, cheaply clonable handle to a classifier.
#[derive(Clone)]
pub struct ModelHandle {
    name: String,
    backend: Backend,
    label_names: (String, String),
    inner: Arc<dyn Classifier>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("name", &self.name)
            .field("backend", &self.backend)
            .field("label_names", &self.label_names)
            .finish()
    }
}

impl ModelHandle {
    pub fn new<C: Classifier + 'static>(
        name: impl Into<String>,
        backend: Backend,
        label_names: (String, String),
        classifier: C,
    ) -> Self {
        Self {
            name: name.into(),
            backend,
            label_names,
            inner: Arc::new(classifier),
        }
    }

    /// Wraps an in-process classifier with default label names.
    pub fn local<C: Classifier + 'static>(name: impl Into<String>, classifier: C) -> Self {
        Self::new(
            name,
            Backend::Builtin,
            ("negative".into(), "positive".into()),
            classifier,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn label_names(&self) -> (&str, &str) {
        (&self.label_names.0, &self.label_names.1)
    }

    pub fn predict(&self, text: &str) -> Result<f64, ModelError> {
        let probs = self.predict_batch(&[text.to_string()])?;
        Ok(probs[0])
    }

    /// Element-wise [`predict`](Self::predict). Fails as a whole if any
    /// element is missing or out of range.
    pub fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>, ModelError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let probs = self.inner.predict_batch(texts)?;
        if probs.len() != texts.len() {
            return Err(ModelError::Protocol(format!(
                "backend returned {} probabilities for {} texts",
                probs.len(),
                texts.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ModelError::Protocol(format!(
                "probability {bad} is outside [0, 1]"
            )));
        }
        Ok(probs)
    }

    pub fn predict_label(&self, text: &str) -> Result<u8, ModelError> {
        self.predict(text).map(label_of)
    }
}

/// Opens a model from a CLI spec: `builtin-nb:<train.jsonl>`, `cmd:<command>`
/// or `http:<url>`.
pub fn open_model(spec: &str, alpha: f64) -> Result<ModelHandle, ModelError> {
    if let Some(path) = spec.strip_prefix("builtin-nb:") {
        let corpus = load_training_file(Path::new(path))?;
        let stem = Path::new(path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("train");
        Ok(train_builtin(&corpus, alpha)?.with_name(format!("builtin-nb-{stem}")))
    } else if spec.starts_with("cmd:") || spec.starts_with("http:") {
        open_external(spec)
    } else {
        Err(ModelError::Spec(spec.to_string()))
    }
}
