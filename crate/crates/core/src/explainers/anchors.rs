//! Anchor rules: the smallest set of token types that, held fixed, keeps the
//! prediction unchanged under perturbation of the rest with high precision.
//!
//! Candidates grow one token at a time from the best anchors of the previous
//! size (beam search). KL-LUCB picks the beam among candidates; a candidate
//! is certified once the KL lower confidence bound on its precision reaches
//! `anchor_tau`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::klucb::{anchor_beta, kl_lucb_bounds};
use super::{AnchorRule, ExplainError, ExplainerConfig, ExplainerKind, Explanation, ExplanationItem, Features};
use crate::corpus::Instance;
use crate::model::{label_of, ModelHandle};
use crate::text::sample_masks;

#[derive(Debug, Clone)]
struct Arm {
    features: Vec<usize>,
    trials: u64,
    successes: u64,
}

impl Arm {
    fn new(features: Vec<usize>) -> Self {
        Self {
            features,
            trials: 0,
            successes: 0,
        }
    }

    fn mean(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    fn bounds(&self, beta: f64) -> (f64, f64) {
        if self.trials == 0 {
            (0.0, 1.0)
        } else {
            kl_lucb_bounds(self.successes, self.trials, beta)
        }
    }
}

enum Verdict {
    Certified,
    Rejected,
    OutOfBudget,
}

struct Search<'a> {
    model: &'a ModelHandle,
    features: Features<'a>,
    cfg: &'a ExplainerConfig,
    rng: ChaCha8Rng,
    predicted: u8,
    used: usize,
}

impl Search<'_> {
    fn d(&self) -> usize {
        self.features.len()
    }

    /// Draws `count` perturbations with the arm's tokens fixed and every
    /// other token kept with probability 1/2. Returns false when the budget
    /// does not allow it.
    fn pull(&mut self, arm: &mut Arm, count: usize) -> Result<bool, ExplainError> {
        if self.used + count > self.cfg.anchor_max_samples {
            return Ok(false);
        }
        let d = self.d();
        let mut texts = Vec::with_capacity(count);
        for _ in 0..count {
            let mut keep: Vec<bool> = (0..d).map(|_| self.rng.random_bool(0.5)).collect();
            for &f in &arm.features {
                keep[f] = true;
            }
            let seed = self.rng.random();
            texts.push(self.features.render(&keep, &self.cfg.perturbation, seed)?);
        }
        let probs = self.model.predict_batch(&texts)?;
        arm.trials += count as u64;
        arm.successes += probs.iter().filter(|&&p| label_of(p) == self.predicted).count() as u64;
        self.used += count;
        Ok(true)
    }

    fn certify(&mut self, arm: &mut Arm, beta: f64) -> Result<Verdict, ExplainError> {
        let tau = self.cfg.anchor_tau;
        loop {
            let (lb, ub) = arm.bounds(beta);
            if arm.trials > 0 && lb >= tau {
                return Ok(Verdict::Certified);
            }
            if arm.trials > 0 && ub < tau {
                return Ok(Verdict::Rejected);
            }
            if !self.pull(arm, self.cfg.anchor_batch_size)? {
                return Ok(Verdict::OutOfBudget);
            }
        }
    }

    /// KL-LUCB selection of the `m` arms with highest precision.
    fn top_arms(&mut self, arms: &mut [Arm], m: usize) -> Result<Vec<usize>, ExplainError> {
        let batch = self.cfg.anchor_batch_size;
        let mut t = 1;
        loop {
            let order = ranked(arms);
            let (top, rest) = order.split_at(m);
            if t > self.cfg.anchor_lucb_max_rounds {
                return Ok(top.to_vec());
            }
            let beta = anchor_beta(arms.len(), t, self.cfg.anchor_delta);
            let weakest_in = *top
                .iter()
                .min_by(|&&a, &&b| arms[a].bounds(beta).0.total_cmp(&arms[b].bounds(beta).0))
                .expect("non-empty top set");
            let strongest_out = *rest
                .iter()
                .max_by(|&&a, &&b| arms[a].bounds(beta).1.total_cmp(&arms[b].bounds(beta).1))
                .expect("non-empty remainder");
            let gap = arms[strongest_out].bounds(beta).1 - arms[weakest_in].bounds(beta).0;
            if gap <= self.cfg.anchor_lucb_epsilon {
                return Ok(top.to_vec());
            }
            let mut a = arms[weakest_in].clone();
            let mut b = arms[strongest_out].clone();
            if !self.pull(&mut a, batch)? || !self.pull(&mut b, batch)? {
                arms[weakest_in] = a;
                return Ok(ranked(arms)[..m].to_vec());
            }
            arms[weakest_in] = a;
            arms[strongest_out] = b;
            t += 1;
        }
    }
}

/// Arm indices by descending mean; ties keep candidate order.
fn ranked(arms: &[Arm]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..arms.len()).collect();
    order.sort_by(|&a, &b| arms[b].mean().total_cmp(&arms[a].mean()).then(a.cmp(&b)));
    order
}

pub fn explain_anchors(
    model: &ModelHandle,
    instance: &Instance,
    cfg: &ExplainerConfig,
) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    cfg.perturbation.validate_for(&instance.tokens)?;
    let features = Features::new(instance);
    let d = features.len();
    let full = features.render(&vec![true; d], &cfg.perturbation, cfg.seed)?;
    let predicted = label_of(model.predict(&full)?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coverage_pool = sample_masks(d, cfg.num_samples, &mut rng);
    let mut search = Search {
        model,
        features,
        cfg,
        rng,
        predicted,
        used: 1,
    };

    let mut best: Option<(Arm, f64)> = None;
    let mut consider = |arm: &Arm, beta: f64| {
        let better = match &best {
            None => true,
            Some((b, _)) => arm.mean() > b.mean(),
        };
        if arm.trials > 0 && better {
            best = Some((arm.clone(), beta));
        }
    };

    let empty_beta = (1.0 / cfg.anchor_delta).ln();
    let mut empty = Arm::new(Vec::new());
    let verdict = search.certify(&mut empty, empty_beta)?;
    consider(&empty, empty_beta);
    if let Verdict::Certified = verdict {
        return Ok(finish(&search, &coverage_pool, &empty, empty_beta, true));
    }

    let cert_beta = ((1.0 + (cfg.beam_width as f64 - 1.0) * d as f64) / cfg.anchor_delta).ln();
    let mut beam: Vec<Vec<usize>> = vec![Vec::new()];
    'sizes: for _size in 1..=d {
        let candidates: BTreeSet<Vec<usize>> = beam
            .iter()
            .flat_map(|anchor| {
                (0..d).filter(move |f| !anchor.contains(f)).map(move |f| {
                    let mut c = anchor.clone();
                    c.push(f);
                    c.sort_unstable();
                    c
                })
            })
            .collect();
        if candidates.is_empty() {
            break;
        }
        let mut arms: Vec<Arm> = candidates.into_iter().map(Arm::new).collect();
        for arm in arms.iter_mut() {
            if !search.pull(arm, cfg.anchor_batch_size)? {
                break 'sizes;
            }
        }
        let chosen = if arms.len() <= cfg.beam_width {
            ranked(&arms)
        } else {
            let mut top = search.top_arms(&mut arms, cfg.beam_width)?;
            top.sort_by(|&a, &b| arms[b].mean().total_cmp(&arms[a].mean()).then(a.cmp(&b)));
            top
        };
        for &idx in &chosen {
            let mut arm = arms[idx].clone();
            let verdict = search.certify(&mut arm, cert_beta)?;
            consider(&arm, cert_beta);
            match verdict {
                Verdict::Certified => {
                    return Ok(finish(&search, &coverage_pool, &arm, cert_beta, true));
                }
                Verdict::Rejected => {}
                Verdict::OutOfBudget => break 'sizes,
            }
            arms[idx] = arm;
        }
        beam = chosen.iter().map(|&i| arms[i].features.clone()).collect();
    }

    let (arm, beta) = best.unwrap_or_else(|| (Arm::new(Vec::new()), empty_beta));
    Ok(finish(&search, &coverage_pool, &arm, beta, false))
}

fn finish(
    search: &Search<'_>,
    coverage_pool: &[Vec<bool>],
    arm: &Arm,
    beta: f64,
    certified: bool,
) -> Explanation {
    let precision = if arm.trials == 0 { 0.0 } else { arm.mean() };
    let (lower, _) = arm.bounds(beta);
    let covered = coverage_pool
        .iter()
        .filter(|m| arm.features.iter().all(|&f| m[f]))
        .count();
    let mut features = arm.features.clone();
    features.sort_unstable();
    let tokens: Vec<String> = features
        .iter()
        .map(|&f| search.features.types()[f].clone())
        .collect();
    Explanation {
        instance_id: search.features.instance.id.clone(),
        explainer: ExplainerKind::Anchors,
        predicted_label: search.predicted,
        items: tokens
            .iter()
            .map(|t| ExplanationItem {
                token: t.clone(),
                weight: precision,
            })
            .collect(),
        confidence: precision,
        sample_budget_used: search.used,
        certified,
        anchor: Some(AnchorRule {
            predicate_tokens: tokens,
            precision_estimate: precision,
            precision_lower_bound: lower.min(precision),
            coverage_estimate: covered as f64 / coverage_pool.len().max(1) as f64,
        }),
    }
}
