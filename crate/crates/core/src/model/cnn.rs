//! Small convolutional feature extractor for image inputs.
//!
//! Three blocks of 3x3 convolution (padding 1), ReLU and 2x2 max-pooling,
//! then global average pooling and a ReLU projection to the feature width.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Linear, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * 9;
        let bound = (6.0 / fan_in as f64).sqrt();
        Conv3x3 {
            in_channels,
            out_channels,
            weight: (0..out_channels * fan_in).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: vec![0.0; out_channels],
        }
    }

    fn w(&self, o: usize, c: usize, di: usize, dj: usize) -> f64 {
        self.weight[((o * self.in_channels + c) * 3 + di) * 3 + dj]
    }

    fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.out_channels * h * w];
        for o in 0..self.out_channels {
            let plane = &mut out[o * h * w..(o + 1) * h * w];
            plane.fill(self.bias[o]);
            for c in 0..self.in_channels {
                let xin = &x[c * h * w..(c + 1) * h * w];
                for di in 0..3 {
                    for dj in 0..3 {
                        let k = self.w(o, c, di, dj);
                        for i in 0..h {
                            let si = i + di;
                            if si < 1 || si > h {
                                continue;
                            }
                            for j in 0..w {
                                let sj = j + dj;
                                if sj < 1 || sj > w {
                                    continue;
                                }
                                plane[i * w + j] += k * xin[(si - 1) * w + (sj - 1)];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&self, x: &[f64], h: usize, w: usize, grad_out: &[f64], grads: &mut Conv3x3) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_channels * h * w];
        for o in 0..self.out_channels {
            let g = &grad_out[o * h * w..(o + 1) * h * w];
            grads.bias[o] += g.iter().sum::<f64>();
            for c in 0..self.in_channels {
                let xin = &x[c * h * w..(c + 1) * h * w];
                for di in 0..3 {
                    for dj in 0..3 {
                        let widx = ((o * self.in_channels + c) * 3 + di) * 3 + dj;
                        let k = self.weight[widx];
                        let mut acc = 0.0;
                        for i in 0..h {
                            let si = i + di;
                            if si < 1 || si > h {
                                continue;
                            }
                            for j in 0..w {
                                let sj = j + dj;
                                if sj < 1 || sj > w {
                                    continue;
                                }
                                let src = c * h * w + (si - 1) * w + (sj - 1);
                                acc += g[i * w + j] * xin[(si - 1) * w + (sj - 1)];
                                grad_in[src] += g[i * w + j] * k;
                            }
                        }
                        grads.weight[widx] += acc;
                    }
                }
            }
        }
        grad_in
    }
}

/// Cached activations of one sample through one block.
#[derive(Debug, Clone)]
struct BlockTrace {
    input: Vec<f64>,
    h: usize,
    w: usize,
    pre: Vec<f64>,
    /// Source index (into the activated map) of every pooled output, or
    /// `None` when the map was too small to pool.
    argmax: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct CnnTrace {
    blocks: Vec<Vec<BlockTrace>>,
    pooled: Array2<f64>,
    pooled_hw: Vec<usize>,
    pre_out: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    pub in_channels: usize,
    pub image_size: usize,
    pub convs: Vec<Conv3x3>,
    pub projection: Linear,
}

fn max_pool(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ph * pw];
    let mut arg = vec![0; c * ph * pw];
    for ch in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                let mut best = (f64::NEG_INFINITY, 0);
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * i + di) * w + 2 * j + dj;
                    if x[idx] > best.0 {
                        best = (x[idx], idx);
                    }
                }
                out[ch * ph * pw + i * pw + j] = best.0;
                arg[ch * ph * pw + i * pw + j] = best.1;
            }
        }
    }
    (out, arg, ph, pw)
}

impl ConvNet {
    pub fn new(in_channels: usize, image_size: usize, channels: &[usize], out_dim: usize, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(channels.len());
        let mut prev = in_channels;
        for &c in channels {
            convs.push(Conv3x3::new(prev, c, rng));
            prev = c;
        }
        ConvNet {
            in_channels,
            image_size,
            convs,
            projection: Linear::new(prev, out_dim, rng),
        }
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.image_size * self.image_size
    }

    pub fn output_dim(&self) -> usize {
        self.projection.outputs()
    }

    fn features(&self, x: &[f64], keep: bool) -> (Vec<f64>, usize, Vec<BlockTrace>) {
        let (mut h, mut w) = (self.image_size, self.image_size);
        let mut cur = x.to_vec();
        let mut traces = Vec::new();
        for conv in &self.convs {
            let pre = conv.forward(&cur, h, w);
            let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            let (next, argmax, nh, nw) = if h >= 2 && w >= 2 {
                let (p, a, ph, pw) = max_pool(&act, conv.out_channels, h, w);
                (p, Some(a), ph, pw)
            } else {
                (act, None, h, w)
            };
            if keep {
                traces.push(BlockTrace {
                    input: std::mem::take(&mut cur),
                    h,
                    w,
                    pre,
                    argmax,
                });
            }
            cur = next;
            h = nh;
            w = nw;
        }
        (cur, h * w, traces)
    }

    fn pool(&self, maps: &[f64], hw: usize) -> Vec<f64> {
        maps.chunks(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let channels = self.projection.inputs();
        let mut pooled = Array2::zeros((x.nrows(), channels));
        for (r, row) in x.rows().into_iter().enumerate() {
            let input = row.to_vec();
            let (maps, hw, _) = self.features(&input, false);
            for (c, v) in self.pool(&maps, hw).into_iter().enumerate() {
                pooled[[r, c]] = v;
            }
        }
        self.projection.forward(pooled.view()).mapv(|v| v.max(0.0))
    }

    pub fn forward_traced(&self, x: ArrayView2<f64>) -> (Array2<f64>, CnnTrace) {
        let channels = self.projection.inputs();
        let mut pooled = Array2::zeros((x.nrows(), channels));
        let mut blocks = Vec::with_capacity(x.nrows());
        let mut pooled_hw = Vec::with_capacity(x.nrows());
        for (r, row) in x.rows().into_iter().enumerate() {
            let input = row.to_vec();
            let (maps, hw, trace) = self.features(&input, true);
            for (c, v) in self.pool(&maps, hw).into_iter().enumerate() {
                pooled[[r, c]] = v;
            }
            blocks.push(trace);
            pooled_hw.push(hw);
        }
        let pre_out = self.projection.forward(pooled.view());
        let out = pre_out.mapv(|v| v.max(0.0));
        (
            out,
            CnnTrace {
                blocks,
                pooled,
                pooled_hw,
                pre_out,
            },
        )
    }

    /// Accumulates parameter gradients; input gradients are not needed.
    pub fn backward(&self, trace: &CnnTrace, grad_out: ArrayView2<f64>, grads: &mut ConvNet) {
        let mut g = grad_out.to_owned();
        super::layers::relu_backward(&trace.pre_out, &mut g);
        let grad_pooled = self
            .projection
            .backward(trace.pooled.view(), g.view(), &mut grads.projection);
        for (r, blocks) in trace.blocks.iter().enumerate() {
            let hw = trace.pooled_hw[r];
            let mut grad: Vec<f64> = grad_pooled
                .row(r)
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v / hw as f64, hw))
                .collect();
            for (b, block) in blocks.iter().enumerate().rev() {
                let conv = &self.convs[b];
                let mut grad_act = match &block.argmax {
                    Some(arg) => {
                        let mut ga = vec![0.0; block.pre.len()];
                        for (gv, &src) in grad.iter().zip(arg) {
                            ga[src] += gv;
                        }
                        ga
                    }
                    None => grad,
                };
                for (ga, &p) in grad_act.iter_mut().zip(&block.pre) {
                    if p <= 0.0 {
                        *ga = 0.0;
                    }
                }
                grad = conv.backward(&block.input, block.h, block.w, &grad_act, &mut grads.convs[b]);
            }
        }
    }
}

impl Params for ConvNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.extend(self.projection.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.extend(self.projection.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = ConvNet::new(2, 6, &[3, 4, 2], 5, &mut rng);
        let x = Array2::from_shape_fn((2, net.input_len()), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((2, 5), |(i, j)| 1.0 + i as f64 - 0.3 * j as f64);
        let loss = |n: &ConvNet| (n.forward(x.view()) * &c).sum();

        let (out, trace) = net.forward_traced(x.view());
        assert_eq!(out, net.forward(x.view()));
        let mut grads = zeros_like(&net);
        net.backward(&trace, c.view(), &mut grads);

        let eps = 1e-6;
        let analytic: Vec<f64> = grads.tensors().concat();
        let mut checked = 0;
        for idx in (0..net.num_params()).step_by(7) {
            let bump = |delta: f64| {
                let mut n = net.clone();
                let mut k = idx;
                for t in n.tensors_mut() {
                    if k < t.len() {
                        t[k] += delta;
                        break;
                    }
                    k -= t.len();
                }
                loss(&n)
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let a = analytic[idx];
            assert!(
                (fd - a).abs() <= 1e-5 * (1.0 + a.abs()),
                "param {idx}: fd {fd} vs analytic {a}"
            );
            checked += 1;
        }
        assert!(checked > 10);
    }
}
