//! Local linear surrogate over Bernoulli-masked neighbours of the input.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::regression::weighted_ridge;
use super::{orient, ExplainError, ExplainerConfig, ExplainerKind, Explanation, ExplanationItem, Features};
use crate::corpus::Instance;
use crate::model::{label_of, ModelHandle};
use crate::text::sample_masks;

/// Cosine distance between the all-ones vector of length `d` and a mask with
/// `kept` ones. The empty mask is taken to be at distance 1.
fn cosine_distance(kept: usize, d: usize) -> f64 {
    if kept == 0 {
        1.0
    } else {
        1.0 - (kept as f64 / d as f64).sqrt()
    }
}

pub fn explain_lime(
    model: &ModelHandle,
    instance: &Instance,
    cfg: &ExplainerConfig,
) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    let features = Features::new(instance);
    let d = features.len();
    cfg.perturbation.validate_for(&instance.tokens)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let masks = sample_masks(d, cfg.num_samples, &mut rng);
    if masks.iter().all(|m| *m == masks[0]) {
        return Err(ExplainError::SurrogateFit(format!(
            "all {} neighbourhood samples are identical",
            masks.len()
        )));
    }
    let texts = features.render_all(&masks, &cfg.perturbation, cfg.seed)?;
    let probs = model.predict_batch(&texts)?;
    let predicted_label = label_of(probs[0]);

    let sigma2 = cfg.kernel_width_sigma * cfg.kernel_width_sigma;
    let x = DMatrix::from_fn(masks.len(), d, |i, j| f64::from(u8::from(masks[i][j])));
    let y = DVector::from_vec(probs);
    let w = DVector::from_iterator(
        masks.len(),
        masks.iter().map(|m| {
            let dist = cosine_distance(m.iter().filter(|&&b| b).count(), d);
            (-dist * dist / sigma2).exp()
        }),
    );
    let (_, coef) = weighted_ridge(&x, &y, &w, cfg.ridge_lambda)?;

    let items = features
        .types()
        .iter()
        .zip(coef.iter())
        .map(|(token, &c)| ExplanationItem {
            token: token.clone(),
            weight: orient(predicted_label, c),
        })
        .collect();
    Ok(Explanation {
        instance_id: instance.id.clone(),
        explainer: ExplainerKind::Lime,
        predicted_label,
        items,
        confidence: 1.0,
        sample_budget_used: masks.len(),
        certified: true,
        anchor: None,
    })
}
