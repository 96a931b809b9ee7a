//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.
//!
//! The published corpus is not bundled. Point `RATIONEVAL_CORPUS` at a copy
//! (TSV or JSONL in the layout `ingest` accepts) to include it in the corpus
//! check; the bundled sample corpus is always checked.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rationeval::corpus::{
    aggregate_rationales, corpus_stats, read_dataset, AggregationMode, Instance, ParseOptions,
};
use rationeval::explainers::{
    exact_shapley, explain_anchors, explain_kernel_shap, explain_lime, kl_lucb_bounds,
    ExplainerConfig, ExplainerKind, Explanation, ExplanationItem,
};
use rationeval::faithfulness::{faithfulness_accuracy, Reference};
use rationeval::harness::run_matrix;
use rationeval::harness::RunConfig;
use rationeval::metrics::{
    explanation_to_weighted_set, plausibility, selected_tokens, weighted_plausibility,
    EpsilonScale, WeightNorm, WeightedSet,
};
use rationeval::model::{train_builtin, KeywordClassifier, ModelHandle};

// Pinned tolerances and limits.
const CORPUS_MEAN_TOL: f64 = 0.05;
const CORPUS_TIME_LIMIT: Duration = Duration::from_secs(5);
const SHAP_ORACLE_TOL: f64 = 1e-6;
const SHAP_AXIOM_TOL: f64 = 1e-9;
const SHAP_TIME_LIMIT: Duration = Duration::from_secs(120);
const SAMPLED_SHAP_TOL: f64 = 1e-3;
const LIME_MIN_SPEARMAN: f64 = 0.9;
const LIME_TIME_LIMIT: Duration = Duration::from_secs(180);
const ANCHOR_MIN_EXACT: usize = 95;
const ANCHOR_MIN_LOWER_BOUND: f64 = 0.95;
const KL_ORACLE_TOL: f64 = 1e-6;
const METRIC_TRIPLES: usize = 10_000;
const FAITHFULNESS_GRID: [f64; 4] = [0.1, 0.2, 0.3, 0.5];
const MATRIX_TIME_LIMIT: Duration = Duration::from_secs(600);

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

// ---------------------------------------------------------------- corpus

/// Corpus statistics recounted from the raw file, without the corpus
/// module: (sentences, words, union words, intersection words, empty
/// intersections) per difficulty.
fn recount_tsv(path: &Path) -> BTreeMap<u8, [usize; 5]> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut out: BTreeMap<u8, [usize; 5]> = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let words = |s: &str| -> usize {
            if s.trim() == "-" {
                0
            } else {
                s.split_whitespace().collect::<BTreeSet<_>>().len()
            }
        };
        let d: u8 = cols[2].trim().parse().unwrap();
        let e = out.entry(d).or_default();
        let inter = words(cols[4]);
        e[0] += 1;
        e[1] += cols[0].split_whitespace().count();
        e[2] += words(cols[3]);
        e[3] += inter;
        e[4] += usize::from(inter == 0);
    }
    out
}

fn check_sample_rows(instances: &[Instance]) -> Result<(), String> {
    // (difficulty, label, union, intersection) of each sample row.
    let expected: [(u8, u8, &str, &str); 8] = [
        (1, 1, "beautiful charm", "beautiful charm"),
        (1, 1, "smarter more diabolical", "smarter diabolical"),
        (1, 0, "none original is n't funny", "none is n't funny"),
        (2, 1, "grief", "grief"),
        (3, 1, "incredible subtlety acumen", "incredible subtlety"),
        (3, 0, "better", "better"),
        (4, 0, "", ""),
        (4, 1, "", ""),
    ];
    ensure!(instances.len() == 8, "fixture has {} rows", instances.len());
    for (inst, (d, l, u, i)) in instances.iter().zip(expected) {
        let set = |s: &str| s.split_whitespace().map(String::from).collect::<BTreeSet<_>>();
        let agg = |m| aggregate_rationales(inst, m).map(|r| r.words).unwrap_or_default();
        ensure!(inst.difficulty == d && inst.gold_label == l, "{}: label/difficulty", inst.id);
        ensure!(agg(AggregationMode::Union) == set(u), "{}: union", inst.id);
        ensure!(agg(AggregationMode::Intersection) == set(i), "{}: intersection", inst.id);
    }
    Ok(())
}

fn corpus_fidelity() -> Outcome {
    let start = Instant::now();
    let tsv = fixtures().join("sample.tsv");
    let jsonl = fixtures().join("sample.jsonl");
    let from_tsv = read_dataset(&tsv, ParseOptions::default()).map_err(|e| e.to_string())?;
    let from_jsonl = read_dataset(&jsonl, ParseOptions::default()).map_err(|e| e.to_string())?;
    ensure!(from_tsv == from_jsonl, "TSV and JSONL fixtures disagree");
    check_sample_rows(&from_tsv)?;

    let stats = corpus_stats(&from_tsv);
    let recount = recount_tsv(&tsv);
    let mut all = [0usize; 5];
    for (d, c) in &recount {
        let s = &stats.per_difficulty[d];
        ensure!(s.sentences == c[0], "difficulty {d}: sentences");
        let n = c[0] as f64;
        ensure!(s.mean_words == c[1] as f64 / n, "difficulty {d}: words");
        ensure!(s.mean_union_words == c[2] as f64 / n, "difficulty {d}: union");
        ensure!(s.mean_intersection_words == c[3] as f64 / n, "difficulty {d}: intersection");
        ensure!(s.empty_intersections == c[4], "difficulty {d}: empty intersections");
        for k in 0..5 {
            all[k] += c[k];
        }
    }
    let counts: Vec<usize> = (1..=4).map(|d| stats.per_difficulty[&d].sentences).collect();
    ensure!(counts == [3, 1, 2, 2], "per-difficulty counts {counts:?}");
    ensure!(stats.total.sentences == 8 && stats.total.empty_intersections == 2, "fixture totals");
    ensure!(stats.total.mean_words == all[1] as f64 / 8.0, "total words");
    let mut detail = format!("fixture: 8 rows, {} words/sentence", stats.total.mean_words);

    match std::env::var_os("RATIONEVAL_CORPUS") {
        Some(path) => {
            let published =
                read_dataset(Path::new(&path), ParseOptions::default()).map_err(|e| e.to_string())?;
            let s = corpus_stats(&published);
            let counts: Vec<usize> = (1..=4).map(|d| s.per_difficulty[&d].sentences).collect();
            ensure!(s.total.sentences == 1973, "published: {} sentences", s.total.sentences);
            ensure!(counts == [1535, 208, 148, 82], "published per-difficulty {counts:?}");
            ensure!(s.total.empty_intersections == 934, "published empty intersections");
            for (got, want) in [
                (s.total.mean_words, 20.9),
                (s.total.mean_union_words, 3.1),
                (s.total.mean_intersection_words, 0.9),
            ] {
                ensure!((got - want).abs() <= CORPUS_MEAN_TOL, "published mean {got} vs {want}");
            }
            detail.push_str("; published corpus matches");
        }
        None => detail.push_str("; published corpus not provided (RATIONEVAL_CORPUS unset)"),
    }
    ensure!(start.elapsed() < CORPUS_TIME_LIMIT, "took {:?}", start.elapsed());
    Ok(detail)
}

// ------------------------------------------------------- synthetic models

/// A vocabulary with latent polarities and a training corpus drawn from it.
struct Synthetic {
    vocab: Vec<String>,
    corpus: Vec<(String, u8)>,
}

fn synthetic(seed: u64, vocab_size: usize) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..vocab_size).map(|k| format!("w{k:02}")).collect();
    let polarity: Vec<f64> = vocab.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut corpus = Vec::new();
    for k in 0..400 {
        let label = (k % 2) as u8;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let weights: Vec<f64> = polarity.iter().map(|p| (sign * p).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut words = Vec::new();
        for _ in 0..8 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = 0;
            while u >= weights[pick] {
                u -= weights[pick];
                pick += 1;
            }
            words.push(vocab[pick].clone());
        }
        // Two tokens that always co-occur are interchangeable players.
        if k % 5 == 0 {
            words.push("twina twinb".into());
        }
        corpus.push((words.join(" "), label));
    }
    Synthetic { vocab, corpus }
}

fn instance(id: String, words: &[String]) -> Instance {
    Instance::new(id, words.join(" "), 1, 1, vec![], None).unwrap()
}

// ------------------------------------------------------------------ shap

fn orient(label: u8, w: f64) -> f64 {
    if label == 1 {
        w
    } else {
        -w
    }
}

fn shap_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let data = synthetic(1, 30);
    let model = train_builtin(&data.corpus, 1.0).unwrap();
    let cfg = ExplainerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_eff, mut worst_sym) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..50 {
        let n = rng.random_range(2..=8);
        let mut words: Vec<String> = data.vocab.choose_multiple(&mut rng, n).cloned().collect();
        words.push("twina".into());
        words.push("twinb".into());
        words.shuffle(&mut rng);
        let inst = instance(format!("x{k}"), &words);
        let exact = exact_shapley(&model, &inst, &cfg).map_err(|e| e.to_string())?;
        let kernel = explain_kernel_shap(&model, &inst, &cfg).map_err(|e| e.to_string())?;
        for ((tok, phi), item) in exact.iter().zip(&kernel.items) {
            ensure!(*tok == item.token, "token order differs");
            worst = worst.max((orient(kernel.predicted_label, *phi) - item.weight).abs());
        }
        let v_full = model.predict(&words.join(" ")).unwrap();
        let v_empty = model.predict(&vec!["UNK"; words.len()].join(" ")).unwrap();
        let total: f64 = exact.iter().map(|(_, p)| p).sum();
        worst_eff = worst_eff.max((total - (v_full - v_empty)).abs());
        let get = |t: &str| exact.iter().find(|(k, _)| k == t).unwrap().1;
        worst_sym = worst_sym.max((get("twina") - get("twinb")).abs());
    }
    ensure!(worst <= SHAP_ORACLE_TOL, "max |kernel - exact| = {worst:e}");
    ensure!(worst_eff <= SHAP_AXIOM_TOL, "efficiency gap {worst_eff:e}");
    ensure!(worst_sym <= SHAP_AXIOM_TOL, "symmetry gap {worst_sym:e}");
    ensure!(start.elapsed() < SHAP_TIME_LIMIT, "took {:?}", start.elapsed());
    Ok(format!(
        "50 instances: max |dphi| {worst:.1e}, efficiency {worst_eff:.1e}, symmetry {worst_sym:.1e}"
    ))
}

fn sampled_shap_local_accuracy() -> Outcome {
    let data = synthetic(3, 40);
    let model = train_builtin(&data.corpus, 1.0).unwrap();
    let cfg = ExplainerConfig::default();
    ensure!(cfg.num_samples == 1000, "default budget changed");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let n = rng.random_range(15..=25);
        let words: Vec<String> = data.vocab.choose_multiple(&mut rng, n).cloned().collect();
        let inst = instance(format!("y{k}"), &words);
        let e = explain_kernel_shap(&model, &inst, &cfg.clone().with_seed(k)).map_err(|e| e.to_string())?;
        ensure!(e.sample_budget_used < 1usize << n, "instance {k} was enumerated, not sampled");
        let v_full = model.predict(&words.join(" ")).unwrap();
        let v_empty = model.predict(&vec!["UNK"; n].join(" ")).unwrap();
        let total: f64 = e.items.iter().map(|i| i.weight).sum();
        worst = worst.max((total - orient(e.predicted_label, v_full - v_empty)).abs());
    }
    ensure!(worst <= SAMPLED_SHAP_TOL, "max local-accuracy gap {worst:e}");
    Ok(format!("20 instances of 15-25 tokens: max gap {worst:.1e}"))
}

// ------------------------------------------------------------------ lime

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Per-word log-odds of a Laplace-smoothed multinomial Naive Bayes,
/// counted directly from the training corpus.
fn log_odds_table(corpus: &[(String, u8)], alpha: f64) -> HashMap<String, f64> {
    let mut counts: HashMap<String, [f64; 2]> = HashMap::new();
    let mut totals = [0.0; 2];
    for (text, label) in corpus {
        for w in text.split_whitespace() {
            counts.entry(w.to_string()).or_default()[*label as usize] += 1.0;
            totals[*label as usize] += 1.0;
        }
    }
    let v = counts.len() as f64;
    counts
        .into_iter()
        .map(|(w, [neg, pos])| {
            let lp = ((pos + alpha) / (totals[1] + alpha * v)).ln();
            let ln = ((neg + alpha) / (totals[0] + alpha * v)).ln();
            (w, lp - ln)
        })
        .collect()
}

fn lime_surrogate_recovery() -> Outcome {
    let start = Instant::now();
    let data = synthetic(5, 60);
    let model = train_builtin(&data.corpus, 1.0).unwrap();
    let oracle = log_odds_table(&data.corpus, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut total = 0.0;
    for k in 0..100 {
        let words: Vec<String> = data.vocab.choose_multiple(&mut rng, 10).cloned().collect();
        let inst = instance(format!("z{k}"), &words);
        let cfg = ExplainerConfig::default().with_seed(k);
        let e = explain_lime(&model, &inst, &cfg).map_err(|e| e.to_string())?;
        let coef: Vec<f64> = e.items.iter().map(|i| orient(e.predicted_label, i.weight)).collect();
        let truth: Vec<f64> = e.items.iter().map(|i| oracle[&i.token]).collect();
        total += spearman(&coef, &truth);
    }
    let mean = total / 100.0;
    ensure!(mean >= LIME_MIN_SPEARMAN, "mean Spearman {mean:.4}");
    ensure!(start.elapsed() < LIME_TIME_LIMIT, "took {:?}", start.elapsed());
    Ok(format!("100 sentences: mean Spearman {mean:.4}"))
}

// --------------------------------------------------------------- anchors

/// Upper and lower KL confidence bounds by plain bisection over q.
fn kl_oracle(successes: u64, trials: u64, beta: f64) -> (f64, f64) {
    let p = successes as f64 / trials as f64;
    let xlogx = |x: f64, y: f64| if x <= 0.0 { 0.0 } else { x * (x / y).ln() };
    let inside = |q: f64| trials as f64 * (xlogx(p, q) + xlogx(1.0 - p, 1.0 - q)) <= beta;
    let search = |mut good: f64, mut bad: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (good + bad);
            if inside(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    let lower = if inside(0.0) { 0.0 } else { search(p, 0.0) };
    let upper = if inside(1.0) { 1.0 } else { search(p, 1.0) };
    (lower, upper)
}

fn anchors_correctness() -> Outcome {
    let model = ModelHandle::local("keyword", KeywordClassifier::new("good"));
    let filler: Vec<String> = "the a film cast plot with and of this movie scene story some really fine its"
        .split_whitespace()
        .map(String::from)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut exact = 0;
    let mut weakest = 1.0f64;
    for k in 0..100u64 {
        let n = rng.random_range(5..=12);
        let mut words: Vec<String> = (0..n).map(|_| filler.choose(&mut rng).unwrap().clone()).collect();
        let at = rng.random_range(0..=words.len());
        words.insert(at, "good".into());
        let inst = instance(format!("a{k}"), &words);
        let e = explain_anchors(&model, &inst, &ExplainerConfig::default().with_seed(k)).map_err(|e| e.to_string())?;
        let rule = e.anchor.as_ref().expect("anchor rule");
        let tokens: Vec<&str> = e.items.iter().map(|i| i.token.as_str()).collect();
        if e.certified && tokens == ["good"] && rule.precision_lower_bound >= ANCHOR_MIN_LOWER_BOUND {
            exact += 1;
            weakest = weakest.min(rule.precision_lower_bound);
        }
    }
    ensure!(exact >= ANCHOR_MIN_EXACT, "{exact}/100 anchors equal {{good}}");

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let trials = rng.random_range(1..=2000u64);
        let successes = rng.random_range(0..=trials);
        let beta = rng.random_range(0.01..20.0);
        let (lo, hi) = kl_lucb_bounds(successes, trials, beta);
        let (olo, ohi) = kl_oracle(successes, trials, beta);
        worst = worst.max((lo - olo).abs()).max((hi - ohi).abs());
    }
    ensure!(worst <= KL_ORACLE_TOL, "KL bounds off by {worst:e}");
    Ok(format!(
        "{exact}/100 anchors exactly {{good}} (min lower bound {weakest:.4}); KL bounds max error {worst:.1e}"
    ))
}

// --------------------------------------------------------------- metrics

fn metrics_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names: Vec<String> = (0..16).map(|k| format!("t{k}")).collect();
    for trial in 0..METRIC_TRIPLES {
        let n = rng.random_range(1..=16);
        let s: BTreeSet<String> = names[..n].iter().cloned().collect();
        let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
            s.iter().filter(|_| rng.random_bool(0.4)).cloned().collect()
        };
        let l = pick(&mut rng);
        let e = pick(&mut rng);
        let p = plausibility(&e, &l, &s).map_err(|e| e.to_string())?;
        for v in [p.precision, p.recall, p.fallout].into_iter().flatten() {
            ensure!((0.0..=1.0).contains(&v), "trial {trial}: score {v} out of range");
        }
        let perfect = p.precision == Some(1.0) && p.recall == Some(1.0);
        ensure!(perfect == (!e.is_empty() && e == l), "trial {trial}: perfect-score equivalence");
        if let Some(extra) = l.difference(&e).next() {
            let mut bigger = e.clone();
            bigger.insert(extra.clone());
            let q = plausibility(&bigger, &l, &s).unwrap();
            ensure!(q.recall >= p.recall, "trial {trial}: recall decreased");
            ensure!(q.fallout <= p.fallout, "trial {trial}: fallout increased");
        }
        let unit = weighted_plausibility(&WeightedSet::uniform(&e), &l, &s).unwrap();
        ensure!(unit == p, "trial {trial}: unit weights differ from unweighted");
        if !e.is_empty() {
            let raw: Vec<f64> = e.iter().map(|_| rng.random_range(0.01..5.0)).collect();
            let c = rng.random_range(0.01..100.0);
            let as_set = |scale: f64| {
                let items: Vec<ExplanationItem> = e
                    .iter()
                    .zip(&raw)
                    .map(|(t, w)| ExplanationItem {
                        token: t.clone(),
                        weight: w * scale,
                    })
                    .collect();
                let ex = Explanation {
                    instance_id: "m".into(),
                    explainer: ExplainerKind::Lime,
                    predicted_label: 1,
                    items,
                    confidence: 1.0,
                    sample_budget_used: 0,
                    certified: true,
                    anchor: None,
                };
                explanation_to_weighted_set(&ex, WeightNorm::Max).unwrap()
            };
            let a = weighted_plausibility(&as_set(1.0), &l, &s).unwrap();
            let b = weighted_plausibility(&as_set(c), &l, &s).unwrap();
            for (x, y) in [(a.precision, b.precision), (a.recall, b.recall), (a.fallout, b.fallout)] {
                let same = match (x, y) {
                    (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
                    (x, y) => x == y,
                };
                ensure!(same, "trial {trial}: max-normalized scores not scale invariant");
            }
        }
    }
    let set = |w: &[&str]| w.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let ew = WeightedSet::new([("a".to_string(), 0.6), ("c".to_string(), 0.4)].into_iter().collect()).unwrap();
    let p = weighted_plausibility(&ew, &set(&["a", "b"]), &set(&["a", "b", "c", "d"])).unwrap();
    ensure!(
        (p.precision, p.recall, p.fallout) == (Some(0.6), Some(0.3), Some(0.2)),
        "worked example gave {p:?}"
    );
    Ok(format!("{METRIC_TRIPLES} triples; worked example (0.6, 0.3, 0.2)"))
}

// ---------------------------------------------------------- faithfulness

fn faithfulness_identity() -> Outcome {
    let instances = read_dataset(&fixtures().join("sample.tsv"), ParseOptions::default()).unwrap();
    let training = rationeval::model::load_training_file(&fixtures().join("train.jsonl")).unwrap();
    let model = train_builtin(&training, 1.0).unwrap();

    let identity: Vec<Explanation> = instances
        .iter()
        .map(|inst| Explanation {
            instance_id: inst.id.clone(),
            explainer: ExplainerKind::Lime,
            predicted_label: 1,
            items: inst
                .token_types()
                .into_iter()
                .map(|token| ExplanationItem { token, weight: 1.0 })
                .collect(),
            confidence: 1.0,
            sample_budget_used: 0,
            certified: true,
            anchor: None,
        })
        .collect();
    let pairs: Vec<(&Instance, &Explanation)> = instances.iter().zip(&identity).collect();
    let r = faithfulness_accuracy(&model, &pairs, 0.0, EpsilonScale::Raw, Reference::Gold)
        .map_err(|e| e.to_string())?;
    ensure!(
        r.accuracy_on_rationales.to_bits() == r.baseline_accuracy.to_bits(),
        "identity accuracy {} vs baseline {}",
        r.accuracy_on_rationales,
        r.baseline_accuracy
    );

    let cfg = ExplainerConfig {
        num_samples: 500,
        ..Default::default()
    };
    let mut checked = 0;
    for inst in &instances {
        for e in [
            explain_lime(&model, inst, &cfg).map_err(|e| e.to_string())?,
            explain_kernel_shap(&model, inst, &cfg).map_err(|e| e.to_string())?,
        ] {
            for pair in FAITHFULNESS_GRID.windows(2) {
                let wide = selected_tokens(&e, pair[0], EpsilonScale::Raw);
                let narrow = selected_tokens(&e, pair[1], EpsilonScale::Raw);
                ensure!(narrow.is_subset(&wide), "{} {}: not nested at {pair:?}", inst.id, e.explainer);
                checked += 1;
            }
        }
    }
    Ok(format!(
        "identity accuracy = baseline = {}; {checked} nested threshold pairs",
        r.baseline_accuracy
    ))
}

// ---------------------------------------------------------- reports

fn report_structure() -> Outcome {
    let start = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let mut cfg = RunConfig::load(&fixtures().join("run.toml")).map_err(|e| e.to_string())?;
        cfg.output_dir = dir.path().to_path_buf();
        cfg.parallelism = 1;
        run_matrix(&cfg).map_err(|e| e.to_string())?;
    }
    let elapsed = start.elapsed();
    let read = |d: &tempfile::TempDir, name: &str| std::fs::read(d.path().join(name)).unwrap();
    for name in ["faithfulness.csv", "metrics.csv"] {
        ensure!(read(&dirs[0], name) == read(&dirs[1], name), "{name} differs between runs");
    }
    let table = String::from_utf8(read(&dirs[0], "faithfulness.csv")).unwrap();
    let mut lines = table.lines();
    ensure!(
        lines.next() == Some("model,baseline,lime@0.1,lime@0.2,lime@0.3,anchors,shap@0.1,shap@0.2,shap@0.3,shap@0.5"),
        "unexpected header"
    );
    let row: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    ensure!(row.len() == 10 && row[1..].iter().all(|c| c.parse::<f64>().is_ok()), "row {row:?}");

    let summaries: serde_json::Value =
        serde_json::from_slice(&read(&dirs[0], "summaries.json")).unwrap();
    let mut strata = BTreeSet::new();
    for g in summaries["plausibility"]["pooled"].as_array().unwrap() {
        let key = &g["key"];
        strata.insert((
            key["explainer"].as_str().unwrap().to_string(),
            key["mode"].as_str().unwrap().to_string(),
            key["difficulty"].as_str().unwrap().to_string(),
        ));
    }
    for kind in ["lime", "anchors", "shap"] {
        for mode in ["union", "intersection"] {
            for d in ["1", "2", "3"] {
                ensure!(strata.contains(&(kind.into(), mode.into(), d.into())), "missing stratum {kind}/{mode}/{d}");
            }
        }
    }
    ensure!(!strata.iter().any(|s| s.2 == "4"), "difficulty 4 in plausibility summaries");
    ensure!(elapsed < MATRIX_TIME_LIMIT * 2, "two runs took {elapsed:?}");
    Ok(format!("header and strata as expected; reruns byte-identical; two runs in {elapsed:.1?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("corpus fidelity", corpus_fidelity),
        ("SHAP oracle equivalence", shap_oracle_equivalence),
        ("sampled SHAP local accuracy", sampled_shap_local_accuracy),
        ("LIME surrogate recovery", lime_surrogate_recovery),
        ("anchors correctness", anchors_correctness),
        ("metrics properties", metrics_properties),
        ("faithfulness identity", faithfulness_identity),
        ("report structure", report_structure),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<30} [{secs:6.2}s] {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<30} [{secs:6.2}s] {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
