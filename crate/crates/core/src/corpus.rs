//! Annotated-rationale corpus: parsing, validation, rationale aggregation and
//! the per-difficulty dataset description.
//!
//! Rationales are sets of normalized token types. The canonical on-disk form
//! is JSONL with one instance per line; a TSV importer accepts the published
//! `sentence, label, difficulty, union, intersection` layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize, tokenize, Token};

/// Reasoning difficulty reserved for sentences that need outside context and
/// carry no rationales.
pub const CONTEXT_DIFFICULTY: u8 = 4;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: input is not valid UTF-8")]
    Utf8 { line: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: rationale word `{word}` does not occur in sentence `{id}`")]
    WordNotInSentence { line: usize, id: String, word: String },
    #[error("line {line}: difficulty {value} is outside 1..=4")]
    Difficulty { line: usize, value: i64 },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("instance `{0}` has neither labeler rationales nor aggregated rationale sets")]
    MissingAnnotation(String),
    #[error("unknown dataset format `{0}` (expected tsv or jsonl)")]
    UnknownFormat(String),
}

impl CorpusError {
    /// True for errors caused by the content of the data rather than the
    /// environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, CorpusError::Io(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Union,
    Intersection,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 2] = [AggregationMode::Union, AggregationMode::Intersection];
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Union => "union",
            Self::Intersection => "intersection",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "union" => Ok(Self::Union),
            "intersection" => Ok(Self::Intersection),
            other => Err(format!("unknown aggregation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Tsv,
    Jsonl,
}

impl DatasetFormat {
    /// Guesses the format from a file extension; anything but `.tsv` is JSONL.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => Self::Tsv,
            _ => Self::Jsonl,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AggregatedRationales {
    pub union: BTreeSet<String>,
    pub intersection: BTreeSet<String>,
}

/// One corpus sentence with its gold label and human rationales.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub gold_label: u8,
    pub difficulty: u8,
    pub labeler_rationales: Vec<BTreeSet<String>>,
    /// Aggregates shipped with the data. When present they take precedence
    /// over re-deriving from `labeler_rationales`.
    pub pre_aggregated: Option<AggregatedRationales>,
}

impl Instance {
    /// Builds and validates an instance from raw fields.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_label: u8,
        difficulty: u8,
        labeler_rationales: Vec<BTreeSet<String>>,
        pre_aggregated: Option<AggregatedRationales>,
    ) -> Result<Self, CorpusError> {
        let raw = RawInstance {
            line: 0,
            id: id.into(),
            text: text.into(),
            label: i64::from(gold_label),
            difficulty: i64::from(difficulty),
            labelers: labeler_rationales,
            aggregated: pre_aggregated,
        };
        raw.validate(false)
    }

    /// Distinct normalized token types in first-occurrence order.
    pub fn token_types(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.tokens
            .iter()
            .filter(|t| seen.insert(t.normalized.as_str()))
            .map(|t| t.normalized.clone())
            .collect()
    }

    pub fn token_type_set(&self) -> BTreeSet<String> {
        self.tokens.iter().map(|t| t.normalized.clone()).collect()
    }

    pub fn has_annotations(&self) -> bool {
        self.pre_aggregated.is_some() || !self.labeler_rationales.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationaleSet {
    pub mode: AggregationMode,
    pub words: BTreeSet<String>,
}

pub fn aggregate_rationales(
    instance: &Instance,
    mode: AggregationMode,
) -> Result<RationaleSet, CorpusError> {
    let words = if let Some(agg) = &instance.pre_aggregated {
        match mode {
            AggregationMode::Union => agg.union.clone(),
            AggregationMode::Intersection => agg.intersection.clone(),
        }
    } else if let Some((first, rest)) = instance.labeler_rationales.split_first() {
        rest.iter().fold(first.clone(), |acc, set| match mode {
            AggregationMode::Union => acc.union(set).cloned().collect(),
            AggregationMode::Intersection => acc.intersection(set).cloned().collect(),
        })
    } else {
        return Err(CorpusError::MissingAnnotation(instance.id.clone()));
    };
    Ok(RationaleSet { mode, words })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Drop rationale words that are absent from the sentence (with a
    /// warning) instead of failing.
    pub lenient: bool,
}

pub fn parse_dataset<R: Read>(
    mut source: R,
    format: DatasetFormat,
    options: ParseOptions,
) -> Result<Vec<Instance>, CorpusError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CorpusError::Utf8 {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
    })?;
    let raws = match format {
        DatasetFormat::Tsv => parse_tsv(text)?,
        DatasetFormat::Jsonl => parse_jsonl(text)?,
    };
    raws.into_iter().map(|r| r.validate(options.lenient)).collect()
}

pub fn read_dataset(
    path: &std::path::Path,
    options: ParseOptions,
) -> Result<Vec<Instance>, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_dataset(
        std::io::BufReader::new(file),
        DatasetFormat::from_path(path),
        options,
    )
}

struct RawInstance {
    line: usize,
    id: String,
    text: String,
    label: i64,
    difficulty: i64,
    labelers: Vec<BTreeSet<String>>,
    aggregated: Option<AggregatedRationales>,
}

impl RawInstance {
    fn validate(self, lenient: bool) -> Result<Instance, CorpusError> {
        let line = self.line;
        let tokens = tokenize(&self.text).map_err(|_| CorpusError::Validation {
            line,
            message: format!("sentence `{}` is empty", self.id),
        })?;
        let gold_label = match self.label {
            0 | 1 => self.label as u8,
            other => {
                return Err(CorpusError::Validation {
                    line,
                    message: format!("label {other} is not 0 or 1"),
                })
            }
        };
        let difficulty = match self.difficulty {
            1..=4 => self.difficulty as u8,
            value => return Err(CorpusError::Difficulty { line, value }),
        };
        let types: BTreeSet<String> = tokens.iter().map(|t| t.normalized.clone()).collect();
        let id = self.id;
        let mut check = |set: BTreeSet<String>| -> Result<BTreeSet<String>, CorpusError> {
            let mut kept = BTreeSet::new();
            for word in set {
                if types.contains(&word) {
                    kept.insert(word);
                } else if lenient {
                    log::warn!("line {line}: dropping rationale word `{word}` absent from `{id}`");
                } else {
                    return Err(CorpusError::WordNotInSentence {
                        line,
                        id: id.clone(),
                        word,
                    });
                }
            }
            Ok(kept)
        };
        let labelers = self
            .labelers
            .into_iter()
            .map(&mut check)
            .collect::<Result<Vec<_>, _>>()?;
        let aggregated = match self.aggregated {
            Some(agg) => Some(AggregatedRationales {
                union: check(agg.union)?,
                intersection: check(agg.intersection)?,
            }),
            None => None,
        };
        if let Some(agg) = &aggregated {
            if !agg.intersection.is_subset(&agg.union) {
                return Err(CorpusError::Validation {
                    line,
                    message: format!("intersection rationale of `{id}` is not a subset of its union"),
                });
            }
        }
        if difficulty == CONTEXT_DIFFICULTY {
            let any = labelers.iter().any(|s| !s.is_empty())
                || aggregated
                    .as_ref()
                    .is_some_and(|a| !a.union.is_empty() || !a.intersection.is_empty());
            if any {
                return Err(CorpusError::Validation {
                    line,
                    message: format!("difficulty-4 sentence `{id}` must not carry rationales"),
                });
            }
        }
        Ok(Instance {
            id,
            text: self.text,
            tokens,
            gold_label,
            difficulty,
            labeler_rationales: labelers,
            pre_aggregated: aggregated,
        })
    }
}

fn word_set<'a, I: IntoIterator<Item = &'a str>>(words: I) -> BTreeSet<String> {
    words
        .into_iter()
        .flat_map(str::split_whitespace)
        .filter(|w| *w != "-")
        .map(normalize)
        .collect()
}

fn parse_tsv(text: &str) -> Result<Vec<RawInstance>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 5 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 3 to 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let label = cols[1].trim();
        if out.is_empty() && label.parse::<i64>().is_err() && idx == first_content_line(text) {
            // header row
            continue;
        }
        let parse_int = |field: &str, what: &str| {
            field.trim().parse::<i64>().map_err(|_| CorpusError::Parse {
                line: line_no,
                message: format!("{what} `{}` is not an integer", field.trim()),
            })
        };
        let union = word_set(cols.get(3).copied());
        let intersection = word_set(cols.get(4).copied());
        out.push(RawInstance {
            line: line_no,
            id: format!("s{}", out.len() + 1),
            text: cols[0].trim().to_string(),
            label: parse_int(label, "label")?,
            difficulty: parse_int(cols[2], "difficulty")?,
            labelers: Vec::new(),
            aggregated: Some(AggregatedRationales {
                union,
                intersection,
            }),
        });
    }
    Ok(out)
}

fn first_content_line(text: &str) -> usize {
    text.lines()
        .position(|l| !l.trim().is_empty())
        .unwrap_or(0)
}

/// JSONL wire form of an [`Instance`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: String,
    text: String,
    label: i64,
    difficulty: i64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labelers: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    union: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intersection: Option<Vec<String>>,
}

fn parse_jsonl(text: &str) -> Result<Vec<RawInstance>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let aggregated = match (rec.union, rec.intersection) {
            (None, None) => None,
            (Some(u), Some(i)) => Some(AggregatedRationales {
                union: word_set(u.iter().map(String::as_str)),
                intersection: word_set(i.iter().map(String::as_str)),
            }),
            _ => {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: "`union` and `intersection` must be given together".into(),
                })
            }
        };
        out.push(RawInstance {
            line: line_no,
            id: rec.id,
            text: rec.text,
            label: rec.label,
            difficulty: rec.difficulty,
            labelers: rec
                .labelers
                .iter()
                .map(|l| word_set(l.iter().map(String::as_str)))
                .collect(),
            aggregated,
        });
    }
    Ok(out)
}

/// Writes instances in the canonical JSONL form.
pub fn write_jsonl<W: Write>(instances: &[Instance], mut out: W) -> Result<(), CorpusError> {
    for inst in instances {
        let rec = InstanceRecord {
            id: inst.id.clone(),
            text: inst.text.clone(),
            label: i64::from(inst.gold_label),
            difficulty: i64::from(inst.difficulty),
            labelers: inst
                .labeler_rationales
                .iter()
                .map(|s| s.iter().cloned().collect())
                .collect(),
            union: inst
                .pre_aggregated
                .as_ref()
                .map(|a| a.union.iter().cloned().collect()),
            intersection: inst
                .pre_aggregated
                .as_ref()
                .map(|a| a.intersection.iter().cloned().collect()),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StratumStats {
    pub sentences: usize,
    pub mean_words: f64,
    pub mean_union_words: f64,
    pub mean_intersection_words: f64,
    pub empty_intersections: usize,
}

/// Dataset description per reasoning difficulty and in total.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatsReport {
    pub per_difficulty: BTreeMap<u8, StratumStats>,
    pub total: StratumStats,
}

#[derive(Default)]
struct Acc {
    n: usize,
    words: usize,
    union: usize,
    intersection: usize,
    empty: usize,
}

impl Acc {
    fn finish(&self) -> StratumStats {
        let mean = |x: usize| if self.n == 0 { 0.0 } else { x as f64 / self.n as f64 };
        StratumStats {
            sentences: self.n,
            mean_words: mean(self.words),
            mean_union_words: mean(self.union),
            mean_intersection_words: mean(self.intersection),
            empty_intersections: self.empty,
        }
    }
}

pub fn corpus_stats(instances: &[Instance]) -> StatsReport {
    let mut strata: BTreeMap<u8, Acc> = (1..=4).map(|d| (d, Acc::default())).collect();
    let mut total = Acc::default();
    for inst in instances {
        let size = |mode| {
            aggregate_rationales(inst, mode)
                .map(|r| r.words.len())
                .unwrap_or(0)
        };
        let (u, i) = (size(AggregationMode::Union), size(AggregationMode::Intersection));
        for acc in [strata.entry(inst.difficulty).or_default(), &mut total] {
            acc.n += 1;
            acc.words += inst.tokens.len();
            acc.union += u;
            acc.intersection += i;
            acc.empty += usize::from(i == 0);
        }
    }
    StatsReport {
        per_difficulty: strata.iter().map(|(d, a)| (*d, a.finish())).collect(),
        total: total.finish(),
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols: Vec<(String, &StratumStats)> = self
            .per_difficulty
            .iter()
            .map(|(d, s)| (d.to_string(), s))
            .chain(std::iter::once(("Total".to_string(), &self.total)))
            .collect();
        let row = |f: &mut fmt::Formatter<'_>, name: &str, cell: &dyn Fn(&StratumStats) -> String| {
            write!(f, "{name:<38}")?;
            for (_, s) in &cols {
                write!(f, "{:>8}", cell(s))?;
            }
            writeln!(f)
        };
        write!(f, "{:<38}", "Difficulty")?;
        for (name, _) in &cols {
            write!(f, "{name:>8}")?;
        }
        writeln!(f)?;
        row(f, "Number of Sentences", &|s| s.sentences.to_string())?;
        row(f, "Words per sentence", &|s| format!("{:.1}", s.mean_words))?;
        row(f, "Words per explanation (union)", &|s| format!("{:.1}", s.mean_union_words))?;
        row(f, "Words per explanation (intersection)", &|s| {
            format!("{:.2}", s.mean_intersection_words)
        })?;
        row(f, "Number of Empty intersections", &|s| s.empty_intersections.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn tsv(rows: &str) -> Result<Vec<Instance>, CorpusError> {
        parse_dataset(rows.as_bytes(), DatasetFormat::Tsv, ParseOptions::default())
    }

    #[test]
    fn tsv_row_with_union_rationale() {
        let out = tsv("beautiful to watch and holds a certain charm\t1\t1\tbeautiful charm\tbeautiful charm\n").unwrap();
        assert_eq!(out.len(), 1);
        let union = aggregate_rationales(&out[0], AggregationMode::Union).unwrap();
        assert_eq!(union.words, set(&["beautiful", "charm"]));
        assert_eq!(out[0].gold_label, 1);
        assert_eq!(out[0].id, "s1");
    }

    #[test]
    fn tsv_difficulty_four_has_empty_sets() {
        let out = tsv("not even the hanson brothers can save it\t0\t4\t-\t-\n").unwrap();
        for mode in AggregationMode::ALL {
            assert!(aggregate_rationales(&out[0], mode).unwrap().words.is_empty());
        }
        let out = tsv("not even the hanson brothers can save it\t0\t4\n").unwrap();
        assert_eq!(out[0].difficulty, 4);
    }

    #[test]
    fn tsv_header_detected() {
        let out = tsv("sentence\tlabel\tdifficulty\tunion\tintersection\ngood film\t1\t1\tgood\tgood\n").unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "s1");
    }

    #[test]
    fn word_missing_from_sentence_is_rejected() {
        let err = tsv("a fine film\t1\t1\tfine superb\tfine\n").unwrap_err();
        match err {
            CorpusError::WordNotInSentence { line, word, .. } => {
                assert_eq!(line, 1);
                assert_eq!(word, "superb");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lenient_mode_drops_missing_word() {
        let out = parse_dataset(
            "a fine film\t1\t1\tfine superb\tfine\n".as_bytes(),
            DatasetFormat::Tsv,
            ParseOptions { lenient: true },
        )
        .unwrap();
        assert_eq!(out[0].pre_aggregated.as_ref().unwrap().union, set(&["fine"]));
    }

    #[test]
    fn difficulty_out_of_range() {
        assert!(matches!(
            tsv("a fine film\t1\t5\tfine\tfine\n"),
            Err(CorpusError::Difficulty { line: 1, value: 5 })
        ));
    }

    #[test]
    fn malformed_rows_report_line() {
        assert!(matches!(
            tsv("good\t1\t1\ngood only\n"),
            Err(CorpusError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            tsv("good\t1\t1\ngood\tx\t1\n"),
            Err(CorpusError::Parse { line: 2, .. })
        ));
        let err = parse_dataset(
            "{\"id\":\"a\"}\n".as_bytes(),
            DatasetFormat::Jsonl,
            ParseOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
    }

    #[test]
    fn rejects_invalid_utf8_with_line() {
        let bytes = b"good\t1\t1\n\xff\t1\t1\n";
        assert!(matches!(
            parse_dataset(&bytes[..], DatasetFormat::Tsv, ParseOptions::default()),
            Err(CorpusError::Utf8 { line: 2 })
        ));
    }

    #[test]
    fn difficulty_four_with_rationale_rejected() {
        assert!(matches!(
            tsv("not even the hanson brothers\t0\t4\thanson\t-\n"),
            Err(CorpusError::Validation { .. })
        ));
    }

    #[test]
    fn labeler_aggregation() {
        let inst = Instance::new(
            "x",
            "it turns out to be smarter and more diabolical than you could have guessed",
            1,
            1,
            vec![set(&["smarter", "more", "diabolical"]), set(&["smarter", "diabolical"])],
            None,
        )
        .unwrap();
        assert_eq!(
            aggregate_rationales(&inst, AggregationMode::Union).unwrap().words,
            set(&["smarter", "more", "diabolical"])
        );
        assert_eq!(
            aggregate_rationales(&inst, AggregationMode::Intersection).unwrap().words,
            set(&["smarter", "diabolical"])
        );
    }

    #[test]
    fn single_labeler_is_identity() {
        let inst = Instance::new("g", "a grief that lingers", 1, 2, vec![set(&["grief"])], None).unwrap();
        for mode in AggregationMode::ALL {
            assert_eq!(aggregate_rationales(&inst, mode).unwrap().words, set(&["grief"]));
        }
    }

    #[test]
    fn missing_annotation() {
        let inst = Instance::new("m", "plain text", 1, 1, vec![], None).unwrap();
        assert!(matches!(
            aggregate_rationales(&inst, AggregationMode::Union),
            Err(CorpusError::MissingAnnotation(id)) if id == "m"
        ));
    }

    #[test]
    fn jsonl_normalizes_words() {
        let line = r#"{"id":"a","text":"A Beautiful charm","label":1,"difficulty":1,"labelers":[["Beautiful"],["beautiful","CHARM"]]}"#;
        let out = parse_dataset(line.as_bytes(), DatasetFormat::Jsonl, ParseOptions::default()).unwrap();
        assert_eq!(out[0].labeler_rationales[1], set(&["beautiful", "charm"]));
        assert_eq!(out[0].token_types(), ["a", "beautiful", "charm"]);
    }

    #[test]
    fn stats_small_cases() {
        let one = tsv("w0 w1 w2 w3 w4 w5 w6 w7 w8 w9\t1\t1\tw1 w2\tw1\n").unwrap();
        let report = corpus_stats(&one);
        assert_eq!(report.total.sentences, 1);
        assert_eq!(report.total.mean_words, 10.0);
        assert_eq!(report.total.mean_union_words, 2.0);

        let two = tsv("good film\t1\t1\tgood\tgood\nbad film\t0\t2\tbad\t-\n").unwrap();
        let report = corpus_stats(&two);
        assert_eq!(report.total.empty_intersections, 1);
        assert_eq!(report.per_difficulty[&2].empty_intersections, 1);
        assert_eq!(report.per_difficulty[&3].sentences, 0);

        let empty = corpus_stats(&[]);
        assert_eq!(empty.total.sentences, 0);
        assert_eq!(empty.total.mean_words, 0.0);
    }

    #[test]
    fn stats_table_renders_rows() {
        let two = tsv("good film\t1\t1\tgood\tgood\n").unwrap();
        let rendered = corpus_stats(&two).to_string();
        assert!(rendered.contains("Number of Sentences"));
        assert!(rendered.lines().next().unwrap().ends_with("Total"));
    }
}
