//! Classification, distillation and attention-alignment losses.
//!
//! All losses take cosine *distances*, so class probabilities are
//! `softmax(-d)`. Softmaxes subtract the row maximum and log-probabilities
//! use the log-sum-exp form. Each loss has a `_grad` twin returning the
//! gradient with respect to its inputs.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::cosine::{rowwise_distance, rowwise_distance_backward};

/// Shape of the attention loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionLossForm {
    /// Negative log-likelihood of the sample's own superclass module.
    #[default]
    Nll,
    /// The bare softmax probability, for ablation only; minimizing it pushes
    /// the fused embedding away from its own module.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Base,
    Novel,
}

fn default_lambda1() -> f64 {
    0.7
}
fn default_lambda2() -> f64 {
    1.1
}
fn default_lambda3() -> f64 {
    0.6
}
fn default_tau() -> f64 {
    2.0
}

/// Loss weights: `lambda1` on classification, `lambda2` on distillation,
/// `lambda3` on attention. `tau` is the distillation temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_lambda3")]
    pub lambda3: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub attention_loss_form: AttentionLossForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: default_lambda1(),
            lambda2: default_lambda2(),
            lambda3: default_lambda3(),
            tau: default_tau(),
            attention_loss_form: AttentionLossForm::Nll,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if lambdas.iter().all(|&l| l == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        check_tau(self.tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Old-class distances `d′` from the frozen pre-session model, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillationContext {
    pub old_scores: Array2<f64>,
}

impl DistillationContext {
    pub fn new(old_scores: Array2<f64>) -> Self {
        DistillationContext { old_scores }
    }

    pub fn num_old(&self) -> usize {
        self.old_scores.ncols()
    }

    /// Rows `rows` of the snapshot, in order.
    pub fn select(&self, rows: &[usize]) -> DistillationContext {
        DistillationContext {
            old_scores: self.old_scores.select(Axis(0), rows),
        }
    }
}

/// `softmax(-x / temperature)` of a row.
pub fn neg_softmax(row: ndarray::ArrayView1<f64>, temperature: f64) -> Array1<f64> {
    let min = row.fold(f64::INFINITY, |m, &v| m.min(v));
    let mut p = row.mapv(|v| (-(v - min) / temperature).exp());
    let sum = p.sum();
    p /= sum;
    p
}

/// `log softmax(-x / temperature)` of a row.
pub fn neg_log_softmax(row: ndarray::ArrayView1<f64>, temperature: f64) -> Array1<f64> {
    let z = row.mapv(|v| -v / temperature);
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + z.mapv(|v| (v - max).exp()).sum().ln();
    z - lse
}

fn check_batch(rows: usize, labels: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    if rows != labels {
        return Err(Error::Shape(format!("{rows} rows but {labels} labels")));
    }
    Ok(())
}

/// Mean cross-entropy of `softmax(-d)` at the label index (0-based).
pub fn classification_loss(distances: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    classification_loss_grad(distances, labels).map(|(l, _)| l)
}

pub fn classification_loss_grad(distances: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_batch(distances.nrows(), labels.len())?;
    let classes = distances.ncols();
    let b = distances.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(distances.raw_dim());
    for (i, (row, &label)) in distances.rows().into_iter().zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::Index(format!("label {label} out of range for {classes} classes")));
        }
        let logp = neg_log_softmax(row, 1.0);
        loss -= logp[label];
        // d/dd_k [-log p_label] = δ_k,label - p_k
        let mut g = grad.row_mut(i);
        g.assign(&logp.mapv(|v| -v.exp() / b));
        g[label] += 1.0 / b;
    }
    Ok((loss / b, grad))
}

/// Distillation between old-class distributions, both restricted and
/// renormalized over the first `n` classes:
/// `p = softmax(-d′/τ)`, `q = softmax(-d[..n]/τ)`, loss = mean `-Σ p log q`.
pub fn distillation_loss(new_distances: ArrayView2<f64>, ctx: &DistillationContext, tau: f64) -> Result<f64> {
    distillation_loss_grad(new_distances, ctx, tau).map(|(l, _)| l)
}

pub fn distillation_loss_grad(
    new_distances: ArrayView2<f64>,
    ctx: &DistillationContext,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    check_tau(tau)?;
    let n = ctx.num_old();
    if n == 0 {
        return Err(Error::Config("distillation needs at least one old class".into()));
    }
    check_batch(new_distances.nrows(), ctx.old_scores.nrows())?;
    if new_distances.ncols() < n {
        return Err(Error::Shape(format!(
            "{} current scores cannot cover {n} old classes",
            new_distances.ncols()
        )));
    }
    let b = new_distances.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(new_distances.raw_dim());
    for (i, (row, old)) in new_distances.rows().into_iter().zip(ctx.old_scores.rows()).enumerate() {
        let block = row.slice(ndarray::s![..n]);
        let p = neg_softmax(old, tau);
        let logq = neg_log_softmax(block, tau);
        loss -= p.dot(&logq);
        // d/dd_k = (p_k - q_k) / τ on the old block, zero elsewhere
        let q = logq.mapv(f64::exp);
        grad.row_mut(i)
            .slice_mut(ndarray::s![..n])
            .assign(&((&p - &q) / (tau * b)));
    }
    Ok((loss / b, grad))
}

/// Entropy of the old-class target distribution, averaged over the batch.
pub fn target_entropy(ctx: &DistillationContext, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let b = ctx.old_scores.nrows();
    if b == 0 {
        return Err(Error::EmptyInput("empty distillation context".into()));
    }
    let total: f64 = ctx
        .old_scores
        .rows()
        .into_iter()
        .map(|old| {
            let logp = neg_log_softmax(old, tau);
            -logp.iter().map(|&l| l.exp() * l).sum::<f64>()
        })
        .sum();
    Ok(total / b as f64)
}

/// Attention alignment: for each sample the fused embedding `e_i` should be
/// closest (in cosine distance) to the module of its superclass.
///
/// `per_module` is `B × N × u`; `superclass_labels` are 0-based.
pub fn attention_loss(
    fused: ArrayView2<f64>,
    per_module: ArrayView3<f64>,
    superclass_labels: &[usize],
    form: AttentionLossForm,
) -> Result<f64> {
    attention_loss_grad(fused, per_module, superclass_labels, form).map(|(l, _, _)| l)
}

/// Returns the loss and its gradients with respect to `fused` and `per_module`.
pub fn attention_loss_grad(
    fused: ArrayView2<f64>,
    per_module: ArrayView3<f64>,
    superclass_labels: &[usize],
    form: AttentionLossForm,
) -> Result<(f64, Array2<f64>, Array3<f64>)> {
    check_batch(fused.nrows(), superclass_labels.len())?;
    let (batch, modules, width) = per_module.dim();
    if batch != fused.nrows() || width != fused.ncols() {
        return Err(Error::Shape(format!(
            "module outputs {:?} do not match fused {:?}",
            per_module.dim(),
            fused.dim()
        )));
    }
    if let Some(&bad) = superclass_labels.iter().find(|&&k| k >= modules) {
        return Err(Error::Index(format!("superclass {bad} out of range for {modules} modules")));
    }
    let b = batch as f64;

    // distances[i, j] = d(e_i, e_i^j)
    let mut distances = Array2::zeros((batch, modules));
    for j in 0..modules {
        let module = per_module.index_axis(Axis(1), j);
        distances.column_mut(j).assign(&rowwise_distance(fused, module));
    }

    let mut loss = 0.0;
    let mut grad_d = Array2::zeros((batch, modules));
    for (i, &k) in superclass_labels.iter().enumerate() {
        let logp = neg_log_softmax(distances.row(i), 1.0);
        let p = logp.mapv(f64::exp);
        let mut g = grad_d.row_mut(i);
        match form {
            AttentionLossForm::Nll => {
                loss -= logp[k];
                g.assign(&(-&p / b));
                g[k] += 1.0 / b;
            }
            AttentionLossForm::Raw => {
                loss += p[k];
                // d p_k / d d_j = -p_k (δ_jk - p_j)
                g.assign(&(&p * (p[k] / b)));
                g[k] -= p[k] / b;
            }
        }
    }

    let mut grad_fused = Array2::zeros(fused.raw_dim());
    let mut grad_modules = Array3::zeros(per_module.raw_dim());
    for j in 0..modules {
        let module = per_module.index_axis(Axis(1), j);
        let col = grad_d.column(j).to_owned();
        let (ga, gb) = rowwise_distance_backward(fused, module, &col);
        grad_fused += &ga;
        grad_modules.index_axis_mut(Axis(1), j).assign(&gb);
    }
    Ok((loss / b, grad_fused, grad_modules))
}

/// Weighted sum of the component losses; the base phase ignores distillation.
pub fn total_loss(lc: f64, ld: f64, la: f64, cfg: &LossConfig, phase: Phase) -> f64 {
    match phase {
        Phase::Base => cfg.lambda1 * lc + cfg.lambda3 * la,
        Phase::Novel => cfg.lambda1 * lc + cfg.lambda2 * ld + cfg.lambda3 * la,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn uniform_distances_give_ln_classes() {
        let l = classification_loss(array![[0.0, 0.0]].view(), &[1]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = classification_loss(array![[0.3, 0.3, 0.3, 0.3]].view(), &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn wide_gap_drives_classification_to_zero() {
        let l = classification_loss(array![[0.0, 50.0, 50.0]].view(), &[0]).unwrap();
        assert!(l < 1e-6 && l >= 0.0);
    }

    #[test]
    fn classification_label_out_of_range() {
        assert!(matches!(
            classification_loss(array![[0.0, 1.0]].view(), &[2]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn distillation_equals_entropy_when_matched() {
        let old = array![[0.1, 0.8, 1.3]];
        let ctx = DistillationContext::new(old.clone());
        let new = array![[0.1, 0.8, 1.3, 0.2, 0.5]];
        let l = distillation_loss(new.view(), &ctx, 2.0).unwrap();
        let h = target_entropy(&ctx, 2.0).unwrap();
        assert!((l - h).abs() < 1e-12);
    }

    #[test]
    fn single_old_class_distills_to_zero() {
        let ctx = DistillationContext::new(array![[0.4]]);
        let l = distillation_loss(array![[1.7, 0.2]].view(), &ctx, 2.0).unwrap();
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn distillation_errors() {
        let ctx = DistillationContext::new(array![[0.4, 0.1]]);
        assert!(matches!(
            distillation_loss(array![[1.0, 0.2]].view(), &ctx, 0.0),
            Err(Error::Config(_))
        ));
        let empty = DistillationContext::new(Array2::zeros((1, 0)));
        assert!(matches!(
            distillation_loss(array![[1.0]].view(), &empty, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attention_single_module_is_zero() {
        let fused = array![[1.0, 2.0]];
        let modules = Array3::from_shape_vec((1, 1, 2), vec![0.5, -1.0]).unwrap();
        let l = attention_loss(fused.view(), modules.view(), &[0], AttentionLossForm::Nll).unwrap();
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn attention_identical_modules_give_ln_n() {
        let fused = array![[1.0, 2.0, 0.0], [0.3, -1.0, 2.0]];
        let modules = Array3::from_shape_fn((2, 4, 3), |(i, _, k)| (i + k) as f64 + 0.5);
        for labels in [[0, 3], [2, 1]] {
            let l = attention_loss(fused.view(), modules.view(), &labels, AttentionLossForm::Nll).unwrap();
            assert!((l - 4f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_orthogonal_pair_value() {
        let fused = array![[1.0, 0.0]];
        let modules = Array3::from_shape_vec((1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let l = attention_loss(fused.view(), modules.view(), &[0], AttentionLossForm::Nll).unwrap();
        let expected = -(1.0 / (1.0 + (-1f64).exp())).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
        assert!(matches!(
            attention_loss(fused.view(), modules.view(), &[2], AttentionLossForm::Nll),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn total_loss_weights() {
        let cfg = LossConfig::default();
        assert!((total_loss(1.0, 1.0, 1.0, &cfg, Phase::Novel) - 2.4).abs() < 1e-12);
        assert_eq!(
            total_loss(0.5, 999.0, 0.2, &cfg, Phase::Base),
            total_loss(0.5, 0.0, 0.2, &cfg, Phase::Base)
        );
        let only_c = LossConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..cfg
        };
        assert_eq!(total_loss(0.37, 5.0, 9.0, &only_c, Phase::Novel), 0.37);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let zero = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..LossConfig::default()
        };
        assert!(zero.validate().is_err());
        assert!(LossConfig { tau: -1.0, ..LossConfig::default() }.validate().is_err());
    }
}
