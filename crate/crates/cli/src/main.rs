use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rationeval::corpus::{
    aggregate_rationales, corpus_stats, parse_dataset, write_jsonl, AggregationMode, CorpusError,
    DatasetFormat, Instance, ParseOptions, CONTEXT_DIFFICULTY,
};
use rationeval::explainers::{
    explain, read_explanations, write_explanations, ExplainError, ExplainerConfig, ExplainerKind,
    Explanation,
};
use rationeval::faithfulness::{self, faithfulness_accuracy, FaithfulnessRecord, Reference};
use rationeval::harness::{
    instance_seed, run_matrix, summarize, EpsilonGrids, GroupField, HarnessError,
    PerturbationConfig, RunConfig,
};
use rationeval::metrics::{
    read_metrics_csv, score_explanation, write_metrics_csv, Denominators, EpsilonScale, MetricsOptions,
    WeightNorm,
};
use rationeval::model::{open_model, ModelError};
use rationeval::text::PerturbationKind;

#[derive(Parser)]
#[command(name = "rationeval", version, about = "Evaluate token-level explanations of sentiment classifiers against human rationales")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a rationale corpus and optionally print its statistics.
    Ingest(IngestArgs),
    /// Explain instances with one model and one explainer; writes JSONL.
    Explain(ExplainArgs),
    /// Score explanations against the corpus rationales; writes CSV.
    Metrics(MetricsArgs),
    /// Re-predict on rationale-only text across thresholds; writes CSV.
    Faithfulness(FaithfulnessArgs),
    /// Summarize the outputs of a previous run without touching any model.
    Report(ReportArgs),
    /// Run the full evaluation matrix described by a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Corpus file (.tsv or .jsonl).
    #[arg(long)]
    data: PathBuf,
    /// Override the format implied by the file extension.
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Drop rationale words missing from their sentence instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    stats: bool,
    /// Write the validated corpus as JSONL.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// `builtin-nb:<train.jsonl>`, `cmd:<command>` or `http:<url>`.
    #[arg(long)]
    model: String,
    /// Laplace smoothing of the builtin classifier.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    explainer: ExplainerKind,
    /// Comma-separated instance ids; all instances when absent.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    num_samples: Option<usize>,
    #[arg(long)]
    perturbation: Option<PerturbationKind>,
    #[arg(long)]
    pos_lexicon: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Explanations JSONL produced by `explain`.
    #[arg(long)]
    explanations: PathBuf,
    /// Model name recorded in every row.
    #[arg(long, default_value = "model")]
    model_name: String,
    /// Thresholds for weighted explainers; per-explainer defaults when absent.
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = AggregationMode::ALL)]
    mode: Vec<AggregationMode>,
    #[arg(long, default_value = "max")]
    weight_norm: WeightNorm,
    #[arg(long, value_parser = parse_scale, default_value = "raw")]
    epsilon_scale: EpsilonScale,
    /// Denominators of weighted recall and fallout: `unweighted` or `weighted`.
    #[arg(long, default_value = "unweighted")]
    denominators: Denominators,
    /// Also score difficulty-4 sentences.
    #[arg(long)]
    include_context: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FaithfulnessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    explanations: PathBuf,
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<f64>,
    #[arg(long, value_parser = parse_scale, default_value = "raw")]
    epsilon_scale: EpsilonScale,
    #[arg(long, default_value = "gold")]
    reference: Reference,
    /// Also write one JSON record per sweep point.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a `run`.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [GroupField::Model, GroupField::Explainer, GroupField::Epsilon, GroupField::Mode, GroupField::Difficulty])]
    group_by: Vec<GroupField>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
}

fn parse_scale(s: &str) -> Result<EpsilonScale, String> {
    match s {
        "raw" => Ok(EpsilonScale::Raw),
        "max" => Ok(EpsilonScale::Max),
        other => Err(format!("unknown epsilon scale `{other}`")),
    }
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Validation(m) | Self::Runtime(m) => m,
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        if e.is_validation() {
            Self::Validation(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Spec(_) | ModelError::Training(_) => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<ExplainError> for Failure {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Model(m) => m.into(),
            ExplainError::Config(_) | ExplainError::TooLarge { .. } | ExplainError::Text(_) => {
                Self::Validation(e.to_string())
            }
            ExplainError::SurrogateFit(_) => Self::Runtime(e.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            Self::Validation(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

impl From<faithfulness::FaithfulnessError> for Failure {
    fn from(e: faithfulness::FaithfulnessError) -> Self {
        match e {
            faithfulness::FaithfulnessError::Model(m) => m.into(),
            other => Self::Validation(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_corpus(args: &DataArgs) -> Result<Vec<Instance>, Failure> {
    let file = File::open(&args.data).map_err(|e| Failure::Validation(format!("{}: {e}", args.data.display())))?;
    let format = args.format.unwrap_or_else(|| DatasetFormat::from_path(&args.data));
    Ok(parse_dataset(BufReader::new(file), format, ParseOptions { lenient: args.lenient })?)
}

fn load_explanations(path: &Path) -> Result<Vec<Explanation>, Failure> {
    let file = File::open(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    read_explanations(BufReader::new(file)).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

/// Runs `write` against the file at `out`, or stdout when absent.
fn emit<F>(out: Option<&Path>, write: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> Result<(), String>,
{
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_failure(path, e))?;
            let mut w = BufWriter::new(file);
            write(&mut w).map_err(|e| io_failure(path, e))?;
            w.flush().map_err(|e| io_failure(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(|e| Failure::Runtime(e))?;
            lock.flush().map_err(|e| Failure::Runtime(e.to_string()))
        }
    }
}

fn pair_with_instances<'a>(
    instances: &'a [Instance],
    explanations: &'a [Explanation],
) -> Result<Vec<(&'a Instance, &'a Explanation)>, Failure> {
    explanations
        .iter()
        .map(|e| {
            instances
                .iter()
                .find(|i| i.id == e.instance_id)
                .map(|i| (i, e))
                .ok_or_else(|| Failure::Validation(format!("no instance `{}` in the corpus", e.instance_id)))
        })
        .collect()
}

fn ingest(args: IngestArgs) -> Result<(), Failure> {
    let instances = load_corpus(&args.data)?;
    if let Some(path) = &args.out {
        emit(Some(path), |w| write_jsonl(&instances, w).map_err(|e| e.to_string()))?;
    }
    if args.stats {
        print!("{}", corpus_stats(&instances));
    } else {
        println!("{} instances ok", instances.len());
    }
    Ok(())
}

fn explain_cmd(args: ExplainArgs) -> Result<(), Failure> {
    let instances = load_corpus(&args.data)?;
    let wanted: Vec<&Instance> = if args.ids.is_empty() {
        instances.iter().collect()
    } else {
        args.ids
            .iter()
            .map(|id| {
                instances
                    .iter()
                    .find(|i| &i.id == id)
                    .ok_or_else(|| Failure::Validation(format!("no instance `{id}` in the corpus")))
            })
            .collect::<Result<_, _>>()?
    };
    let perturbation = PerturbationConfig {
        strategy: args.perturbation.unwrap_or_default(),
        pos_lexicon: args.pos_lexicon.clone(),
        ..Default::default()
    };
    let mut cfg = ExplainerConfig::default();
    if let Some(n) = args.num_samples {
        cfg.num_samples = n;
    }
    cfg.perturbation = perturbation.build()?;
    let model = open_model(&args.model.model, args.model.alpha)?;
    let explanations = wanted
        .iter()
        .map(|inst| explain(args.explainer, &model, inst, &cfg.clone().with_seed(instance_seed(args.seed, &inst.id))))
        .collect::<Result<Vec<_>, _>>()?;
    emit(args.out.as_deref(), |w| write_explanations(&explanations, w).map_err(|e| e.to_string()))
}

fn metrics_cmd(args: MetricsArgs) -> Result<(), Failure> {
    let instances = load_corpus(&args.data)?;
    let explanations = load_explanations(&args.explanations)?;
    let pairs = pair_with_instances(&instances, &explanations)?;
    let grids = if args.epsilon.is_empty() {
        EpsilonGrids::default()
    } else {
        EpsilonGrids {
            lime: args.epsilon.clone(),
            shap: args.epsilon.clone(),
            anchors: Vec::new(),
        }
    };
    let options = MetricsOptions {
        weight_norm: args.weight_norm,
        epsilon_scale: args.epsilon_scale,
        denominators: args.denominators,
    };
    let mut rows = Vec::new();
    for (inst, e) in pairs {
        let context = inst.difficulty == CONTEXT_DIFFICULTY;
        if context && !args.include_context {
            continue;
        }
        for &mode in &args.mode {
            let rationale = match aggregate_rationales(inst, mode) {
                Ok(r) => r.words,
                Err(_) if context => BTreeSet::new(),
                Err(err) => return Err(err.into()),
            };
            for eps in grids.points(e.explainer) {
                let record = score_explanation(&args.model_name, inst, e, &rationale, mode, eps, options)
                    .map_err(|err| Failure::Validation(format!("{}: {err}", inst.id)))?;
                rows.push(record);
            }
        }
    }
    emit(args.out.as_deref(), |w| write_metrics_csv(&rows, w).map_err(|e| e.to_string()))
}

fn faithfulness_cmd(args: FaithfulnessArgs) -> Result<(), Failure> {
    let instances = load_corpus(&args.data)?;
    let explanations = load_explanations(&args.explanations)?;
    let pairs = pair_with_instances(&instances, &explanations)?;
    let model = open_model(&args.model.model, args.model.alpha)?;
    let mut records: Vec<FaithfulnessRecord> = Vec::new();
    for kind in ExplainerKind::ALL {
        let of_kind: Vec<(&Instance, &Explanation)> =
            pairs.iter().copied().filter(|(_, e)| e.explainer == kind).collect();
        if of_kind.is_empty() {
            continue;
        }
        let points = if kind == ExplainerKind::Anchors || args.epsilon.is_empty() {
            EpsilonGrids::default().points(kind)
        } else {
            args.epsilon.iter().copied().map(Some).collect()
        };
        for eps in points {
            records.push(faithfulness_accuracy(
                &model,
                &of_kind,
                eps.unwrap_or(0.0),
                args.epsilon_scale,
                args.reference,
            )?);
        }
    }
    if let Some(path) = &args.records {
        emit(Some(path), |w| faithfulness::write_records(&records, w).map_err(|e| e.to_string()))?;
    }
    emit(args.out.as_deref(), |w| faithfulness::write_table(&records, w).map_err(|e| e.to_string()))
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let metrics_path = args.run_dir.join("metrics.csv");
    let file = File::open(&metrics_path).map_err(|e| Failure::Validation(format!("{}: {e}", metrics_path.display())))?;
    let metrics = read_metrics_csv(file).map_err(|e| Failure::Validation(format!("{}: {e}", metrics_path.display())))?;

    let records_path = args.run_dir.join("faithfulness.jsonl");
    let source = std::fs::read_to_string(&records_path)
        .map_err(|e| Failure::Validation(format!("{}: {e}", records_path.display())))?;
    let faithfulness: Vec<FaithfulnessRecord> = source
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Validation(format!("{}: {e}", records_path.display())))?;

    let faithfulness_keys: Vec<GroupField> = args
        .group_by
        .iter()
        .copied()
        .filter(|f| !matches!(f, GroupField::Mode | GroupField::Difficulty))
        .collect();
    let value = serde_json::json!({
        "group_by": args.group_by,
        "plausibility": summarize(&metrics, &args.group_by),
        "faithfulness": summarize(&faithfulness, &faithfulness_keys),
    });
    emit(args.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &value).map_err(|e| e.to_string())?;
        writeln!(w).map_err(|e| e.to_string())
    })
}

fn run_cmd(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_env()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    let manifest = run_matrix(&cfg)?;
    for skip in &manifest.skipped {
        log::warn!(
            "skipped {} / {} / {} at {}: {}",
            skip.model,
            skip.explainer,
            skip.instance_id,
            skip.stage,
            skip.message
        );
    }
    println!(
        "{} instances, {} metric rows, {} faithfulness rows, {} skipped; outputs in {}",
        manifest.instances,
        manifest.metrics_rows,
        manifest.faithfulness_rows,
        manifest.skipped.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Faithfulness(a) => faithfulness_cmd(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
