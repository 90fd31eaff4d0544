//! The combined training objective on one batch of global features, with
//! analytic gradients for every fusion-head parameter.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    attention_loss_grad, classification_loss_grad, distillation_loss_grad, total_loss, DistillationContext,
    LossConfig, Phase,
};
use crate::model::cosine::{distance_matrix, distance_matrix_backward};
use crate::model::{zeros_like, FusionHead};

/// One batch entering the network after the backbone.
pub struct BatchInputs<'a> {
    /// Global features `g`, `B × u`.
    pub features: ArrayView2<'a, f64>,
    /// Head position of each row's class.
    pub labels: &'a [usize],
    /// Superclass of each row's class.
    pub superclasses: &'a [usize],
    /// Rows that contribute to the attention loss (task samples, not
    /// replayed prototypes).
    pub attention_rows: &'a [usize],
    /// Frozen old-class distances, row-aligned with `features`.
    pub old_scores: Option<&'a DistillationContext>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lc: f64,
    pub ld: f64,
    pub la: f64,
    pub total: f64,
}

/// Loss value and gradients. The distillation term is only evaluated in the
/// novel phase and only when old scores are given.
pub fn batch_objective(
    fusion: &FusionHead,
    class_semantics: ArrayView2<f64>,
    batch: &BatchInputs<'_>,
    cfg: &LossConfig,
    phase: Phase,
) -> Result<(LossBreakdown, FusionHead)> {
    let rows = batch.features.nrows();
    if batch.labels.len() != rows || batch.superclasses.len() != rows {
        return Err(Error::Shape("batch labels do not match feature rows".into()));
    }
    let trace = fusion.forward_traced(batch.features);
    let y = trace.y();
    let distances = distance_matrix(y.view(), class_semantics);

    let (lc, grad_c) = classification_loss_grad(distances.view(), batch.labels)?;
    let mut grad_d = grad_c * cfg.lambda1;

    let mut ld = 0.0;
    if phase == Phase::Novel {
        if let Some(ctx) = batch.old_scores {
            let (l, g) = distillation_loss_grad(distances.view(), ctx, cfg.tau)?;
            ld = l;
            grad_d.scaled_add(cfg.lambda2, &g);
        }
    }
    let grad_y = distance_matrix_backward(y.view(), class_semantics, grad_d.view());

    let mut la = 0.0;
    let mut grad_fused = Array2::zeros(trace.fused.raw_dim());
    let mut grad_modules: Vec<Array2<f64>> = trace.per_module.iter().map(|m| Array2::zeros(m.raw_dim())).collect();
    if !batch.attention_rows.is_empty() {
        let fused = trace.fused.select(Axis(0), batch.attention_rows);
        let modules = trace.stacked_modules().select(Axis(0), batch.attention_rows);
        let labels: Vec<usize> = batch.attention_rows.iter().map(|&r| batch.superclasses[r]).collect();
        let (l, gf, gm) = attention_loss_grad(fused.view(), modules.view(), &labels, cfg.attention_loss_form)?;
        la = l;
        for (i, &r) in batch.attention_rows.iter().enumerate() {
            grad_fused.row_mut(r).scaled_add(cfg.lambda3, &gf.row(i));
            for (k, gmk) in grad_modules.iter_mut().enumerate() {
                gmk.row_mut(r).scaled_add(cfg.lambda3, &gm.slice(ndarray::s![i, k, ..]));
            }
        }
    }

    let mut grads = zeros_like(fusion);
    fusion.backward(&trace, grad_y.view(), Some(grad_fused.view()), Some(&grad_modules), &mut grads);
    let total = total_loss(lc, ld, la, cfg, phase);
    Ok((LossBreakdown { lc, ld, la, total }, grads))
}
