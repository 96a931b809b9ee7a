//! Whitespace tokenization and the perturbation primitives shared by every
//! explainer.
//!
//! Explainers operate on token *types* (lowercased surface forms), while the
//! perturbed strings handed to a model keep the original surface forms and
//! word order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tag assigned to words the POS lexicon does not list.
pub const FALLBACK_TAG: &str = "X";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("mask length {mask} does not match token count {tokens}")]
    MaskLength { mask: usize, tokens: usize },
    #[error("POS lexicon has no words for tag `{0}`")]
    MissingTag(String),
    #[error("malformed POS lexicon at line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("unknown perturbation strategy `{0}` (expected drop, unk or pos)")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub position: usize,
}

pub fn normalize(word: &str) -> String {
    word.to_lowercase()
}

/// Splits on runs of whitespace. Punctuation stays attached to whatever it
/// was attached to in the input; the corpus is shipped pre-tokenized.
pub fn tokenize(text: &str) -> Result<Vec<Token>, TextError> {
    let tokens: Vec<Token> = text
        .split_whitespace()
        .enumerate()
        .map(|(position, surface)| Token {
            surface: surface.to_string(),
            normalized: normalize(surface),
            position,
        })
        .collect();
    if tokens.is_empty() {
        return Err(TextError::EmptyInput);
    }
    Ok(tokens)
}

/// Coarse-POS word lists used by the POS-preserving perturbation.
///
/// File format: sections headed by `#TAG`, one word per line. Words not
/// listed under any tag are treated as [`FALLBACK_TAG`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PosLexicon {
    words: BTreeMap<String, Vec<String>>,
    tag_of: HashMap<String, String>,
}

impl PosLexicon {
    pub fn parse(source: &str) -> Result<Self, TextError> {
        let mut lexicon = PosLexicon::default();
        let mut current: Option<String> = None;
        for (idx, raw) in source.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(tag) = line.strip_prefix('#') {
                let tag = tag.trim();
                if tag.is_empty() {
                    return Err(TextError::Lexicon {
                        line: idx + 1,
                        message: "empty tag name".into(),
                    });
                }
                lexicon.words.entry(tag.to_string()).or_default();
                current = Some(tag.to_string());
                continue;
            }
            let Some(tag) = &current else {
                return Err(TextError::Lexicon {
                    line: idx + 1,
                    message: "word before the first #TAG header".into(),
                });
            };
            let word = normalize(line);
            lexicon.tag_of.entry(word.clone()).or_insert_with(|| tag.clone());
            lexicon.words.entry(tag.clone()).or_default().push(word);
        }
        Ok(lexicon)
    }

    pub fn tag_of(&self, normalized: &str) -> &str {
        self.tag_of
            .get(normalized)
            .map(String::as_str)
            .unwrap_or(FALLBACK_TAG)
    }

    pub fn words(&self, tag: &str) -> Option<&[String]> {
        self.words
            .get(tag)
            .map(Vec::as_slice)
            .filter(|w| !w.is_empty())
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.words.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Drop,
    #[default]
    #[serde(alias = "unk")]
    UnkReplace,
    #[serde(alias = "pos")]
    PosPreserving,
}

impl FromStr for PerturbationKind {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(Self::Drop),
            "unk" | "unk_replace" => Ok(Self::UnkReplace),
            "pos" | "pos_preserving" => Ok(Self::PosPreserving),
            other => Err(TextError::UnknownStrategy(other.to_string())),
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Drop => "drop",
            Self::UnkReplace => "unk_replace",
            Self::PosPreserving => "pos_preserving",
        })
    }
}

/// How masked-out tokens are rendered in a perturbed sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationStrategy {
    pub kind: PerturbationKind,
    pub unk_token: String,
    pub pos_lexicon: Option<PosLexicon>,
}

impl Default for PerturbationStrategy {
    fn default() -> Self {
        Self::unk()
    }
}

impl PerturbationStrategy {
    pub fn drop() -> Self {
        Self {
            kind: PerturbationKind::Drop,
            unk_token: "UNK".into(),
            pos_lexicon: None,
        }
    }

    pub fn unk() -> Self {
        Self {
            kind: PerturbationKind::UnkReplace,
            ..Self::drop()
        }
    }

    pub fn pos_preserving(lexicon: PosLexicon) -> Self {
        Self {
            kind: PerturbationKind::PosPreserving,
            unk_token: "UNK".into(),
            pos_lexicon: Some(lexicon),
        }
    }

    /// Checks that every tag the strategy could emit for `tokens` has a
    /// non-empty word list.
    pub fn validate_for(&self, tokens: &[Token]) -> Result<(), TextError> {
        if self.kind != PerturbationKind::PosPreserving {
            return Ok(());
        }
        let lexicon = self
            .pos_lexicon
            .as_ref()
            .ok_or_else(|| TextError::MissingTag(FALLBACK_TAG.into()))?;
        for token in tokens {
            let tag = lexicon.tag_of(&token.normalized);
            if lexicon.words(tag).is_none() {
                return Err(TextError::MissingTag(tag.to_string()));
            }
        }
        Ok(())
    }

    /// Whether rendering a masked token consumes randomness.
    pub fn is_stochastic(&self) -> bool {
        self.kind == PerturbationKind::PosPreserving
    }
}

/// Renders `tokens` with the positions where `keep` is false perturbed.
pub fn apply_mask<R: Rng + ?Sized>(
    tokens: &[Token],
    keep: &[bool],
    strategy: &PerturbationStrategy,
    rng: &mut R,
) -> Result<String, TextError> {
    if keep.len() != tokens.len() {
        return Err(TextError::MaskLength {
            mask: keep.len(),
            tokens: tokens.len(),
        });
    }
    let mut words: Vec<&str> = Vec::with_capacity(tokens.len());
    for (token, &kept) in tokens.iter().zip(keep) {
        if kept {
            words.push(&token.surface);
            continue;
        }
        match strategy.kind {
            PerturbationKind::Drop => {}
            PerturbationKind::UnkReplace => words.push(&strategy.unk_token),
            PerturbationKind::PosPreserving => {
                let lexicon = strategy
                    .pos_lexicon
                    .as_ref()
                    .ok_or_else(|| TextError::MissingTag(FALLBACK_TAG.into()))?;
                let tag = lexicon.tag_of(&token.normalized);
                let choices = lexicon
                    .words(tag)
                    .ok_or_else(|| TextError::MissingTag(tag.to_string()))?;
                words.push(&choices[rng.random_range(0..choices.len())]);
            }
        }
    }
    Ok(words.join(" "))
}

/// Draws `count` keep-masks of length `n` with independent Bernoulli(0.5)
/// bits. The first mask is always all ones (the unperturbed input).
pub fn sample_masks<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<Vec<bool>> {
    let mut masks = Vec::with_capacity(count.max(1));
    masks.push(vec![true; n]);
    for _ in 1..count {
        masks.push((0..n).map(|_| rng.random_bool(0.5)).collect());
    }
    masks
}
