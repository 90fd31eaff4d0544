use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Flat access to every parameter tensor, in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

/// A copy of `p` with every parameter set to zero; used as a gradient buffer.
pub fn zeros_like<P: Params + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.fill_zero();
    z
}

pub(crate) fn slice(a: &ndarray::ArrayBase<impl ndarray::Data<Elem = f64>, impl ndarray::Dimension>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

/// Fully connected layer, `y = x Wᵀ + b` over a batch of row vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// He-uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / inputs.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-bound..bound));
        Linear {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, x: ArrayView2<f64>, grad_out: ArrayView2<f64>, grads: &mut Linear) -> Array2<f64> {
        grads.weight += &grad_out.t().dot(&x);
        grads.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight)
    }
}

impl Params for Linear {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice(&self.weight), slice(&self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice_mut(&mut self.weight), slice_mut(&mut self.bias)]
    }
}

pub(crate) fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zeroes `grad` where the pre-activation was not positive.
pub(crate) fn relu_backward(pre: &Array2<f64>, grad: &mut Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Stack of linear layers with ReLU between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply ReLU after the last layer too.
    pub activate_last: bool,
}

/// Per-layer inputs and pre-activations from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    pub fn new(widths: &[usize], activate_last: bool, rng: &mut impl Rng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Mlp { layers, activate_last }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::outputs)
    }

    fn activates(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.activate_last
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(h.view());
            if self.activates(i) {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    pub fn forward_traced(&self, x: ArrayView2<f64>) -> MlpTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(h.view());
            inputs.push(h);
            h = if self.activates(i) { relu(&z) } else { z.clone() };
            pre.push(z);
        }
        MlpTrace { inputs, pre, output: h }
    }

    pub fn backward(&self, trace: &MlpTrace, grad_out: ArrayView2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut g = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            if self.activates(i) {
                relu_backward(&trace.pre[i], &mut g);
            }
            g = self.layers[i].backward(trace.inputs[i].view(), g.view(), &mut grads.layers[i]);
        }
        g
    }
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Params::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Params::tensors_mut).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Linear::new(3, 2, &mut rng);
        let x = array![[0.3, -1.0, 2.0], [1.5, 0.2, -0.7]];
        // loss = sum(y * c) for a fixed c
        let c = array![[1.0, -2.0], [0.5, 3.0]];
        let mut grads = zeros_like(&layer);
        let gx = layer.backward(x.view(), c.view(), &mut grads);
        let loss = |l: &Linear, x: &Array2<f64>| (l.forward(x.view()) * &c).sum();
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = layer.clone();
                p.weight[[i, j]] += eps;
                let mut m = layer.clone();
                m.weight[[i, j]] -= eps;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
                assert!((fd - grads.weight[[i, j]]).abs() < 1e-6);
            }
        }
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += eps;
                let mut xm = x.clone();
                xm[[i, j]] -= eps;
                let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * eps);
                assert!((fd - gx[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn relu_hidden_layers_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mlp = Mlp::new(&[4, 6, 5, 3], false, &mut rng);
        let x = Array2::from_shape_fn((7, 4), |(i, j)| (i as f64 - 3.0) * (j as f64 + 0.5));
        let trace = mlp.forward_traced(x.view());
        for h in &trace.inputs[1..] {
            assert!(h.iter().all(|&v| v >= 0.0));
        }
        assert_eq!(trace.output, mlp.forward(x.view()));
        assert_eq!(mlp.num_params(), 4 * 6 + 6 + 6 * 5 + 5 + 5 * 3 + 3);
    }
}
