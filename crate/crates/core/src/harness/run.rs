use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::summary::{summarize, GroupField};
use super::{HarnessError, RunConfig};
use crate::corpus::{aggregate_rationales, read_dataset, Instance, ParseOptions, CONTEXT_DIFFICULTY};
use crate::explainers::{explain, write_explanations, ExplainError, ExplainerKind, Explanation};
use crate::faithfulness::{self, accuracy_at, full_sentence_labels, FaithfulnessRecord};
use crate::metrics::{score_explanation, write_metrics_csv, MetricsOptions, MetricsRecord};
use crate::model::{open_model, ModelHandle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub spec: String,
    pub backend: String,
}

/// A (model, explainer, instance) cell that produced no output at some stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub model: String,
    pub explainer: ExplainerKind,
    pub instance_id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub instances: usize,
    pub models: Vec<ModelInfo>,
    pub explainers: Vec<ExplainerKind>,
    /// Explanations written per `<model>__<explainer>` file.
    pub explanations: BTreeMap<String, usize>,
    pub metrics_rows: usize,
    pub faithfulness_rows: usize,
    pub skipped: Vec<SkipRecord>,
    pub started_unix: u64,
    pub timings_ms: BTreeMap<String, u64>,
}

/// Seed of one instance's explanations, independent of scheduling order.
pub fn instance_seed(global: u64, instance_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(instance_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn file_stem_of(model: &str) -> String {
    model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<(), HarnessError> {
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn open_models(cfg: &RunConfig) -> Result<Vec<(ModelHandle, String)>, HarnessError> {
    let mut taken = BTreeSet::new();
    let mut models = Vec::new();
    for spec in &cfg.models {
        let handle = open_model(spec, cfg.smoothing_alpha)?;
        let base = handle.name().to_string();
        let mut name = base.clone();
        let mut k = 2;
        while !taken.insert(name.clone()) {
            name = format!("{base}-{k}");
            k += 1;
        }
        models.push((handle.with_name(name), spec.clone()));
    }
    Ok(models)
}

fn elapsed_ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

/// Runs the full matrix and writes every output under `cfg.output_dir`.
///
/// Explanations are computed once per (model, explainer, instance) and shared
/// by the plausibility and faithfulness stages. Transport failures abort the
/// run; any other per-instance failure is skipped and listed in the manifest.
pub fn run_matrix(cfg: &RunConfig) -> Result<Manifest, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut timings = BTreeMap::new();

    let out = &cfg.output_dir;
    let explanations_dir = out.join("explanations");
    std::fs::create_dir_all(&explanations_dir).map_err(|e| HarnessError::io(&explanations_dir, e))?;

    let instances: Vec<Instance> = read_dataset(&cfg.dataset, ParseOptions { lenient: cfg.lenient })?
        .into_iter()
        .filter(|i| cfg.difficulties.is_empty() || cfg.difficulties.contains(&i.difficulty))
        .collect();
    if instances.is_empty() {
        return Err(HarnessError::Config("no instances left after filtering".into()));
    }
    let mut explainer_cfg = cfg.explainer.clone();
    explainer_cfg.perturbation = cfg.perturbation.build()?;
    let models = open_models(cfg)?;
    timings.insert("setup".to_string(), elapsed_ms(started));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let metrics_options = MetricsOptions {
        weight_norm: cfg.scoring.weight_norm,
        epsilon_scale: cfg.scoring.epsilon_scale,
        denominators: cfg.scoring.denominators,
    };

    let mut skipped = Vec::new();
    let mut metrics_rows: Vec<MetricsRecord> = Vec::new();
    let mut faithfulness_rows: Vec<FaithfulnessRecord> = Vec::new();
    let mut explanation_counts = BTreeMap::new();
    let (mut explain_ms, mut metrics_ms, mut faithfulness_ms) = (0, 0, 0);

    for (model, _) in &models {
        let all: Vec<&Instance> = instances.iter().collect();
        let full_labels = full_sentence_labels(model, &all)?;
        for &kind in &cfg.explainers {
            let t = Instant::now();
            let results: Vec<Result<Explanation, ExplainError>> = pool.install(|| {
                instances
                    .par_iter()
                    .map(|inst| {
                        let local = explainer_cfg.clone().with_seed(instance_seed(cfg.seed, &inst.id));
                        explain(kind, model, inst, &local)
                    })
                    .collect()
            });
            let mut done: Vec<(usize, Explanation)> = Vec::new();
            for (k, result) in results.into_iter().enumerate() {
                match result {
                    Ok(e) => done.push((k, e)),
                    Err(ExplainError::Model(e)) => return Err(e.into()),
                    Err(e) => skipped.push(SkipRecord {
                        model: model.name().to_string(),
                        explainer: kind,
                        instance_id: instances[k].id.clone(),
                        stage: "explain".into(),
                        message: e.to_string(),
                    }),
                }
            }
            let cell = format!("{}__{kind}", file_stem_of(model.name()));
            let path = explanations_dir.join(format!("{cell}.jsonl"));
            let mut w = create(&path)?;
            let just: Vec<Explanation> = done.iter().map(|(_, e)| e.clone()).collect();
            write_explanations(&just, &mut w).map_err(|e| HarnessError::io(&path, e))?;
            finish(&path, w)?;
            explanation_counts.insert(cell, just.len());
            explain_ms += elapsed_ms(t);

            let t = Instant::now();
            for (k, e) in &done {
                let inst = &instances[*k];
                if inst.difficulty == CONTEXT_DIFFICULTY && !cfg.plausibility_include_context {
                    continue;
                }
                for &mode in &cfg.modes {
                    let rationale = match aggregate_rationales(inst, mode) {
                        Ok(r) => r.words,
                        Err(_) if inst.difficulty == CONTEXT_DIFFICULTY => BTreeSet::new(),
                        Err(err) => {
                            skipped.push(SkipRecord {
                                model: model.name().to_string(),
                                explainer: kind,
                                instance_id: inst.id.clone(),
                                stage: "metrics".into(),
                                message: err.to_string(),
                            });
                            break;
                        }
                    };
                    for eps in cfg.epsilon.points(kind) {
                        match score_explanation(model.name(), inst, e, &rationale, mode, eps, metrics_options) {
                            Ok(r) => metrics_rows.push(r),
                            Err(err) => skipped.push(SkipRecord {
                                model: model.name().to_string(),
                                explainer: kind,
                                instance_id: inst.id.clone(),
                                stage: "metrics".into(),
                                message: err.to_string(),
                            }),
                        }
                    }
                }
            }
            metrics_ms += elapsed_ms(t);

            let t = Instant::now();
            if !done.is_empty() {
                let pairs: Vec<(&Instance, &Explanation)> =
                    done.iter().map(|(k, e)| (&instances[*k], e)).collect();
                let labels: Vec<u8> = done.iter().map(|(k, _)| full_labels[*k]).collect();
                for eps in cfg.epsilon.points(kind) {
                    faithfulness_rows.push(accuracy_at(
                        model,
                        &pairs,
                        &labels,
                        eps.unwrap_or(0.0),
                        cfg.scoring.epsilon_scale,
                        cfg.scoring.reference,
                    )?);
                }
            }
            faithfulness_ms += elapsed_ms(t);
        }
    }
    timings.insert("explain".to_string(), explain_ms);
    timings.insert("metrics".to_string(), metrics_ms);
    timings.insert("faithfulness".to_string(), faithfulness_ms);

    let t = Instant::now();
    let path = out.join("metrics.csv");
    let mut w = create(&path)?;
    write_metrics_csv(&metrics_rows, &mut w)?;
    finish(&path, w)?;

    let path = out.join("faithfulness.csv");
    let mut w = create(&path)?;
    faithfulness::write_table(&faithfulness_rows, &mut w)?;
    finish(&path, w)?;

    let path = out.join("faithfulness.jsonl");
    let mut w = create(&path)?;
    faithfulness::write_records(&faithfulness_rows, &mut w).map_err(|e| HarnessError::io(&path, e))?;
    finish(&path, w)?;

    let summaries = summaries_json(cfg, &metrics_rows, &faithfulness_rows);
    write_json(&out.join("summaries.json"), &summaries)?;
    timings.insert("report".to_string(), elapsed_ms(t));
    timings.insert("total".to_string(), elapsed_ms(started));

    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        dataset: cfg.dataset.display().to_string(),
        instances: instances.len(),
        models: models
            .iter()
            .map(|(m, spec)| ModelInfo {
                name: m.name().to_string(),
                spec: spec.clone(),
                backend: m.backend().to_string(),
            })
            .collect(),
        explainers: cfg.explainers.clone(),
        explanations: explanation_counts,
        metrics_rows: metrics_rows.len(),
        faithfulness_rows: faithfulness_rows.len(),
        skipped,
        started_unix,
        timings_ms: timings,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    finish(path, w)
}

/// Plausibility distributions per model and pooled over models, stratified
/// by difficulty and aggregation mode, plus the faithfulness sweep.
pub(crate) fn summaries_json(
    cfg: &RunConfig,
    metrics: &[MetricsRecord],
    faithfulness: &[FaithfulnessRecord],
) -> serde_json::Value {
    use GroupField::*;
    serde_json::json!({
        "scoring": cfg.scoring,
        "plausibility": {
            "per_model": summarize(metrics, &[Model, Explainer, Epsilon, Mode, Difficulty]),
            "per_model_all_difficulties": summarize(metrics, &[Model, Explainer, Epsilon, Mode]),
            "pooled": summarize(metrics, &[Explainer, Epsilon, Mode, Difficulty]),
            "pooled_all_difficulties": summarize(metrics, &[Explainer, Epsilon, Mode]),
        },
        "faithfulness": {
            "per_model": summarize(faithfulness, &[Model, Explainer, Epsilon]),
            "pooled": summarize(faithfulness, &[Explainer, Epsilon]),
        },
    })
}
