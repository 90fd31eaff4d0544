//! Superclass embedding modules, attention fusion and the semantic mapping.
//!
//! For a batch of global features `g` (`B × u`):
//!
//! ```text
//! e^k = relu(E_k g)                    k = 1..N
//! α^k = softmax_k(wᵀ tanh(V e^k))
//! e   = Σ_k α^k e^k
//! y   = M([g ; e])
//! ```

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu, relu_backward, slice, slice_mut, Linear, Mlp, MlpTrace, Params};
use super::Component;

/// Attention scorer: `V` is `L × u`, `w` has length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub v: Array2<f64>,
    pub w: Array1<f64>,
}

impl Attention {
    pub fn new(hidden: usize, u: usize, rng: &mut impl Rng) -> Self {
        let bv = (6.0 / (hidden + u) as f64).sqrt();
        let bw = (6.0 / (hidden + 1) as f64).sqrt();
        Attention {
            v: Array2::from_shape_simple_fn((hidden, u), || rng.random_range(-bv..bv)),
            w: Array1::from_shape_simple_fn(hidden, || rng.random_range(-bw..bw)),
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Trainable part of the network downstream of the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub embeddings: Vec<Linear>,
    pub attention: Attention,
    pub mapping: Mlp,
}

#[derive(Debug, Clone)]
pub struct FusionTrace {
    pub g: Array2<f64>,
    pub emb_pre: Vec<Array2<f64>>,
    /// `e^k` for each module, `B × u`.
    pub per_module: Vec<Array2<f64>>,
    pub att_hidden: Vec<Array2<f64>>,
    /// `B × N`
    pub alphas: Array2<f64>,
    /// `e`, `B × u`.
    pub fused: Array2<f64>,
    pub mapping: MlpTrace,
}

impl FusionTrace {
    pub fn y(&self) -> &Array2<f64> {
        &self.mapping.output
    }

    /// Module outputs stacked as `B × N × u`.
    pub fn stacked_modules(&self) -> Array3<f64> {
        let views: Vec<_> = self.per_module.iter().map(|m| m.view().insert_axis(Axis(1))).collect();
        concatenate(Axis(1), &views).expect("module outputs share a shape")
    }
}

impl FusionHead {
    /// `mapping_hidden` are the hidden widths of `M`; its output width is `d`.
    pub fn new(
        u: usize,
        d: usize,
        modules: usize,
        attention_hidden: usize,
        mapping_hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let embeddings = (0..modules).map(|_| Linear::new(u, u, rng)).collect();
        let attention = Attention::new(attention_hidden, u, rng);
        let mut widths = vec![2 * u];
        widths.extend_from_slice(mapping_hidden);
        widths.push(d);
        FusionHead {
            embeddings,
            attention,
            mapping: Mlp::new(&widths, false, rng),
        }
    }

    pub fn num_modules(&self) -> usize {
        self.embeddings.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.attention.v.ncols()
    }

    pub fn semantic_dim(&self) -> usize {
        self.mapping.output_dim()
    }

    /// Module outputs and their attention logits.
    fn modules_and_logits(&self, g: ArrayView2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let n = self.embeddings.len();
        let mut pre = Vec::with_capacity(n);
        let mut outs = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n);
        let mut logits = Array2::zeros((g.nrows(), n));
        for (k, emb) in self.embeddings.iter().enumerate() {
            let z = emb.forward(g);
            let e = relu(&z);
            let h = e.dot(&self.attention.v.t()).mapv(f64::tanh);
            logits.column_mut(k).assign(&h.dot(&self.attention.w));
            pre.push(z);
            outs.push(e);
            hidden.push(h);
        }
        (pre, outs, hidden, logits)
    }

    /// Fused embedding `e` and attention weights for a batch.
    pub fn attention_fuse(&self, g: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (_, outs, _, logits) = self.modules_and_logits(g);
        let alphas = softmax_rows(&logits);
        let fused = fuse(&outs, &alphas);
        (fused, alphas)
    }

    /// `y = M([g ; e])`
    pub fn map_to_semantic(&self, g: ArrayView2<f64>, e: ArrayView2<f64>) -> Array2<f64> {
        let f = concatenate(Axis(1), &[g, e]).expect("g and e share the batch size");
        self.mapping.forward(f.view())
    }

    pub fn forward(&self, g: ArrayView2<f64>) -> Array2<f64> {
        let (e, _) = self.attention_fuse(g);
        self.map_to_semantic(g, e.view())
    }

    pub fn forward_traced(&self, g: ArrayView2<f64>) -> FusionTrace {
        let (emb_pre, per_module, att_hidden, logits) = self.modules_and_logits(g);
        let alphas = softmax_rows(&logits);
        let fused = fuse(&per_module, &alphas);
        let f = concatenate(Axis(1), &[g, fused.view()]).expect("g and e share the batch size");
        let mapping = self.mapping.forward_traced(f.view());
        FusionTrace {
            g: g.to_owned(),
            emb_pre,
            per_module,
            att_hidden,
            alphas,
            fused,
            mapping,
        }
    }

    /// Backpropagates `grad_y` plus optional direct gradients on `e` and on
    /// each `e^k`, accumulating into `grads`.
    pub fn backward(
        &self,
        trace: &FusionTrace,
        grad_y: ArrayView2<f64>,
        grad_fused: Option<ArrayView2<f64>>,
        grad_modules: Option<&[Array2<f64>]>,
        grads: &mut FusionHead,
    ) {
        let u = self.feature_dim();
        let grad_f = self.mapping.backward(&trace.mapping, grad_y, &mut grads.mapping);
        let mut grad_e = grad_f.slice(s![.., u..]).to_owned();
        if let Some(extra) = grad_fused {
            grad_e += &extra;
        }

        let n = self.embeddings.len();
        let batch = trace.g.nrows();
        // dL/dα^k = <dL/de, e^k>
        let mut grad_alpha = Array2::zeros((batch, n));
        for k in 0..n {
            let col = (&grad_e * &trace.per_module[k]).sum_axis(Axis(1));
            grad_alpha.column_mut(k).assign(&col);
        }
        let weighted = (&grad_alpha * &trace.alphas).sum_axis(Axis(1));
        let grad_logits = (&grad_alpha - &weighted.insert_axis(Axis(1))) * &trace.alphas;

        for k in 0..n {
            let alpha_k = trace.alphas.column(k).insert_axis(Axis(1));
            let mut grad_ek = &grad_e * &alpha_k;
            if let Some(extra) = grad_modules {
                grad_ek += &extra[k];
            }
            let h = &trace.att_hidden[k];
            let gl = grad_logits.column(k);
            grads.attention.w += &h.t().dot(&gl);
            let grad_h = gl.insert_axis(Axis(1)).dot(&self.attention.w.view().insert_axis(Axis(0)));
            let grad_pre_att = grad_h * &h.mapv(|t| 1.0 - t * t);
            grads.attention.v += &grad_pre_att.t().dot(&trace.per_module[k]);
            grad_ek += &grad_pre_att.dot(&self.attention.v);

            relu_backward(&trace.emb_pre[k], &mut grad_ek);
            self.embeddings[k].backward(trace.g.view(), grad_ek.view(), &mut grads.embeddings[k]);
        }
    }

    /// Component owning each tensor, in [`Params::tensors`] order.
    pub fn tensor_components(&self) -> Vec<Component> {
        let mut out = vec![Component::Embeddings; 2 * self.embeddings.len()];
        out.extend([Component::Attention, Component::Attention]);
        out.extend(std::iter::repeat_n(Component::Mapping, 2 * self.mapping.layers.len()));
        out
    }

    pub fn component_params(&self, component: Component) -> usize {
        match component {
            Component::Embeddings => self.embeddings.iter().map(Params::num_params).sum(),
            Component::Attention => self.attention.v.len() + self.attention.w.len(),
            Component::Mapping => self.mapping.num_params(),
            Component::Backbone => 0,
        }
    }
}

fn fuse(outs: &[Array2<f64>], alphas: &Array2<f64>) -> Array2<f64> {
    let mut fused = Array2::zeros(outs[0].raw_dim());
    for (k, e) in outs.iter().enumerate() {
        fused += &(e * &alphas.column(k).insert_axis(Axis(1)));
    }
    fused
}

impl Params for FusionHead {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.embeddings.iter().flat_map(Params::tensors).collect();
        out.push(slice(&self.attention.v));
        out.push(slice(&self.attention.w));
        out.extend(self.mapping.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.embeddings.iter_mut().flat_map(Params::tensors_mut).collect();
        out.push(slice_mut(&mut self.attention.v));
        out.push(slice_mut(&mut self.attention.w));
        out.extend(self.mapping.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_module_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = FusionHead::new(4, 3, 1, 5, &[6], &mut rng);
        let g = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        let (e, alphas) = head.attention_fuse(g.view());
        assert!(alphas.iter().all(|&a| a == 1.0));
        let direct = relu(&head.embeddings[0].forward(g.view()));
        assert!((e - direct).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_scorer_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut head = FusionHead::new(4, 3, 3, 5, &[6], &mut rng);
        head.attention.w.fill(0.0);
        let g = Array2::from_shape_fn((2, 4), |(i, j)| i as f64 - j as f64);
        let (_, alphas) = head.attention_fuse(g.view());
        assert!(alphas.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn zero_mapping_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = FusionHead::new(4, 3, 2, 5, &[6, 7], &mut rng);
        head.mapping.fill_zero();
        let g = Array2::from_elem((2, 4), 0.7);
        assert!(head.forward(g.view()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trace_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = FusionHead::new(4, 3, 3, 5, &[6, 7], &mut rng);
        let g = Array2::from_shape_fn((5, 4), |(i, j)| ((i + 2 * j) as f64).sin());
        let trace = head.forward_traced(g.view());
        assert_eq!(trace.y(), &head.forward(g.view()));
        assert_eq!(trace.stacked_modules().shape(), &[5, 3, 4]);
        assert_eq!(head.tensor_components().len(), head.tensors().len());
    }
}
