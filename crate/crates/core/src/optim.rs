use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam or plain SGD over a fixed list of tensors.
///
/// Tensors whose `trainable` flag is false are skipped entirely, including
/// their moment estimates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip: Option<f64>,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, clip: Option<f64>) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, trainable: &[bool]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), trainable.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        let scale = match self.clip {
            Some(max_norm) => {
                let norm = grads
                    .iter()
                    .zip(trainable)
                    .filter(|(_, &t)| t)
                    .flat_map(|(g, _)| g.iter())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if !trainable[i] {
                continue;
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &dw) in p.iter_mut().zip(g) {
                        *w -= self.lr * scale * dw;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.len() {
                        let dw = g[j] * scale;
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * dw;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * dw * dw;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, None);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(vec![x.as_mut_slice()], vec![g.as_slice()], &[true]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }

    #[test]
    fn frozen_tensors_do_not_move() {
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, Some(1.0));
        opt.step(vec![&mut a, &mut b], vec![&[10.0], &[10.0]], &[true, false]);
        assert_eq!(b, [1.0]);
        // clipped to unit norm
        assert!((a[0] - 0.9).abs() < 1e-12);
    }
}
