//! Finite-difference check of the novel-phase objective against the
//! analytic fusion-head gradients.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{DistillationContext, LossConfig, Phase};
use crate::model::{FusionHead, Params};
use crate::objective::{batch_objective, BatchInputs};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub feature_dim: usize,
    pub semantic_dim: usize,
    pub num_modules: usize,
    pub attention_hidden: usize,
    pub mapping_hidden: Vec<usize>,
    pub num_classes: usize,
    pub num_old: usize,
    pub batch: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            feature_dim: 8,
            semantic_dim: 6,
            num_modules: 3,
            attention_hidden: 5,
            mapping_hidden: vec![12],
            num_classes: 5,
            num_old: 3,
            batch: 4,
            epsilon: 1e-4,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub checked: usize,
}

fn tensor_names(head: &FusionHead) -> Vec<String> {
    let mut names = Vec::new();
    for k in 0..head.embeddings.len() {
        names.push(format!("embeddings.{k}.weight"));
        names.push(format!("embeddings.{k}.bias"));
    }
    names.push("attention.v".into());
    names.push("attention.w".into());
    for l in 0..head.mapping.layers.len() {
        names.push(format!("mapping.{l}.weight"));
        names.push(format!("mapping.{l}.bias"));
    }
    names
}

/// Relative error with a floor so that near-zero gradients compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every fusion-head parameter with central differences.
pub fn check_gradients(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = FusionHead::new(
        cfg.feature_dim,
        cfg.semantic_dim,
        cfg.num_modules,
        cfg.attention_hidden,
        &cfg.mapping_hidden,
        &mut rng,
    );
    // keep embedding pre-activations away from the ReLU kink
    for emb in &mut head.embeddings {
        emb.bias = Array1::from_shape_simple_fn(emb.bias.len(), || rng.random_range(0.2..0.6));
    }
    let features = Array2::from_shape_simple_fn((cfg.batch, cfg.feature_dim), || rng.random_range(0.0..1.0));
    let semantics = Array2::from_shape_simple_fn((cfg.num_classes, cfg.semantic_dim), || rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..cfg.batch).map(|i| i % cfg.num_classes).collect();
    let superclasses: Vec<usize> = (0..cfg.batch).map(|i| i % cfg.num_modules).collect();
    // the last row plays a replayed prototype and skips the attention term
    let attention_rows: Vec<usize> = (0..cfg.batch.saturating_sub(1)).collect();
    let old = DistillationContext::new(Array2::from_shape_simple_fn((cfg.batch, cfg.num_old), || {
        rng.random_range(0.0..2.0)
    }));
    let inputs = BatchInputs {
        features: features.view(),
        labels: &labels,
        superclasses: &superclasses,
        attention_rows: &attention_rows,
        old_scores: Some(&old),
    };

    let (_, analytic) = batch_objective(&head, semantics.view(), &inputs, &cfg.loss, Phase::Novel)?;
    let analytic: Vec<Vec<f64>> = analytic.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let names = tensor_names(&head);

    let mut tensors = Vec::with_capacity(analytic.len());
    let mut checked = 0;
    for (t, grad) in analytic.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for j in 0..grad.len() {
            let orig = head.tensors()[t][j];
            head.tensors_mut()[t][j] = orig + cfg.epsilon;
            let plus = batch_objective(&head, semantics.view(), &inputs, &cfg.loss, Phase::Novel)?.0.total;
            head.tensors_mut()[t][j] = orig - cfg.epsilon;
            let minus = batch_objective(&head, semantics.view(), &inputs, &cfg.loss, Phase::Novel)?.0.total;
            head.tensors_mut()[t][j] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            max_rel = max_rel.max(relative_error(grad[j], numeric));
            max_abs = max_abs.max((grad[j] - numeric).abs());
            checked += 1;
        }
        tensors.push(TensorCheck {
            name: names[t].clone(),
            len: grad.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_instance_passes() {
        let r = check_gradients(&GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error < 1e-3, "{:#?}", r.tensors);
        assert_eq!(r.tensors.len(), 3 * 2 + 2 + 4);
    }
}
