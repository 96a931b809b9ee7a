//! Shapley-value attribution over token-type coalitions.
//!
//! The coalition game is `v(K) = p_pos(text with only K kept)`, with the
//! baseline `v(∅)` being the fully perturbed sentence. [`exact_shapley`]
//! evaluates the classical subset formula; [`explain_kernel_shap`] solves the
//! Shapley-kernel weighted least-squares problem under the efficiency
//! constraint, over every coalition when the sentence is small and over
//! sampled coalitions otherwise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::regression::weighted_least_squares;
use super::{orient, ExplainError, ExplainerConfig, ExplainerKind, Explanation, ExplanationItem, Features};
use crate::corpus::Instance;
use crate::model::{label_of, ModelHandle};
use crate::text::sample_masks;

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `k` among `d` players.
/// Infinite for the empty and full coalitions.
pub fn shapley_kernel_weight(d: usize, k: usize) -> f64 {
    if k == 0 || k == d {
        return f64::INFINITY;
    }
    (d - 1) as f64 / (binomial(d, k) * k as f64 * (d - k) as f64)
}

fn mask_of(bits: usize, d: usize) -> Vec<bool> {
    (0..d).map(|j| bits >> j & 1 == 1).collect()
}

/// Exact Shapley values of the positive-class probability, one per token
/// type in first-occurrence order. Enumerates all `2^d` coalitions.
pub fn exact_shapley(
    model: &ModelHandle,
    instance: &Instance,
    cfg: &ExplainerConfig,
) -> Result<Vec<(String, f64)>, ExplainError> {
    let features = Features::new(instance);
    let d = features.len();
    if d > cfg.shap_exact_threshold {
        return Err(ExplainError::TooLarge {
            n: d,
            max: cfg.shap_exact_threshold,
        });
    }
    cfg.perturbation.validate_for(&instance.tokens)?;
    let masks: Vec<Vec<bool>> = (0..1usize << d).map(|b| mask_of(b, d)).collect();
    let texts = features.render_all(&masks, &cfg.perturbation, cfg.seed)?;
    let v = model.predict_batch(&texts)?;

    // |S|! (d - |S| - 1)! / d!  ==  1 / (d * C(d-1, |S|))
    let weight: Vec<f64> = (0..d).map(|s| 1.0 / (d as f64 * binomial(d - 1, s))).collect();
    let phi = (0..d)
        .map(|i| {
            let bit = 1usize << i;
            let value = (0..1usize << d)
                .filter(|s| s & bit == 0)
                .map(|s| weight[s.count_ones() as usize] * (v[s | bit] - v[s]))
                .sum::<f64>();
            (features.types()[i].clone(), value)
        })
        .collect();
    Ok(phi)
}

pub fn explain_kernel_shap(
    model: &ModelHandle,
    instance: &Instance,
    cfg: &ExplainerConfig,
) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    let features = Features::new(instance);
    let d = features.len();
    cfg.perturbation.validate_for(&instance.tokens)?;

    let full = vec![true; d];
    let empty = vec![false; d];
    let coalitions: Vec<Vec<bool>> = if d <= cfg.shap_exact_threshold {
        (1..(1usize << d) - 1).map(|b| mask_of(b, d)).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        sample_masks(d, cfg.num_samples, &mut rng)
            .into_iter()
            .filter(|m| m.iter().any(|&b| b) && !m.iter().all(|&b| b))
            .collect()
    };

    let mut texts = features.render_all([&full, &empty], &cfg.perturbation, cfg.seed)?;
    texts.extend(features.render_all(&coalitions, &cfg.perturbation, cfg.seed)?);
    let values = model.predict_batch(&texts)?;
    let (v_full, v_empty) = (values[0], values[1]);
    let predicted_label = label_of(v_full);
    let delta = v_full - v_empty;

    let phi: Vec<f64> = if d == 1 {
        vec![delta]
    } else if coalitions.is_empty() {
        return Err(ExplainError::SurrogateFit(
            "no informative coalitions were sampled".into(),
        ));
    } else {
        // Eliminate the last player through sum(phi) = delta.
        let last = d - 1;
        let rows = coalitions.len();
        let x = DMatrix::from_fn(rows, last, |r, j| {
            f64::from(u8::from(coalitions[r][j])) - f64::from(u8::from(coalitions[r][last]))
        });
        let y = DVector::from_iterator(
            rows,
            coalitions.iter().zip(&values[2..]).map(|(m, &v)| {
                v - v_empty - if m[last] { delta } else { 0.0 }
            }),
        );
        let w = DVector::from_iterator(
            rows,
            coalitions
                .iter()
                .map(|m| shapley_kernel_weight(d, m.iter().filter(|&&b| b).count())),
        );
        let head = weighted_least_squares(&x, &y, &w)?;
        let mut phi: Vec<f64> = head.iter().copied().collect();
        phi.push(delta - head.sum());
        phi
    };

    let items = features
        .types()
        .iter()
        .zip(&phi)
        .map(|(token, &p)| ExplanationItem {
            token: token.clone(),
            weight: orient(predicted_label, p),
        })
        .collect();
    Ok(Explanation {
        instance_id: instance.id.clone(),
        explainer: ExplainerKind::Shap,
        predicted_label,
        items,
        confidence: 1.0,
        sample_budget_used: texts.len(),
        certified: true,
        anchor: None,
    })
}
