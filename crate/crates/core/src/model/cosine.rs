//! Cosine distance `d(a, b) = 1 - cos(a, b)` and its gradients.
//!
//! The batched forms used during training take norms as `sqrt(|v|² + ε²)`
//! so a vanishing activation never divides by zero; the exact per-vector
//! form rejects zero vectors.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

const NORM_EPS_SQ: f64 = 1e-24;

fn smooth_norms(x: ArrayView2<f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| (r.dot(&r) + NORM_EPS_SQ).sqrt())
}

/// Exact cosine distance between two nonzero vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("cosine distance of a zero-norm vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(1.0 - (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Distances between every row of `y` (`B × d`) and every row of `s` (`C × d`).
pub fn distance_matrix(y: ArrayView2<f64>, s: ArrayView2<f64>) -> Array2<f64> {
    let ny = smooth_norms(y);
    let ns = smooth_norms(s);
    let mut d = y.dot(&s.t());
    for (mut row, &a) in d.rows_mut().into_iter().zip(&ny) {
        Zip::from(&mut row).and(&ns).for_each(|v, &b| *v = 1.0 - *v / (a * b));
    }
    d
}

/// Gradient with respect to `y` of `Σ grad_d ⊙ distance_matrix(y, s)`.
pub fn distance_matrix_backward(y: ArrayView2<f64>, s: ArrayView2<f64>, grad_d: ArrayView2<f64>) -> Array2<f64> {
    let ny = smooth_norms(y);
    let ns = smooth_norms(s);
    let cos = {
        let mut c = y.dot(&s.t());
        for (mut row, &a) in c.rows_mut().into_iter().zip(&ny) {
            Zip::from(&mut row).and(&ns).for_each(|v, &b| *v /= a * b);
        }
        c
    };
    // d cos_c / d y = s_c / (|y||s_c|) - cos_c y / |y|²
    let scaled_g = &grad_d / &ns;
    let mut grad = -scaled_g.dot(&s);
    for (r, mut row) in grad.rows_mut().into_iter().enumerate() {
        let a = ny[r];
        row /= a;
        let k: f64 = grad_d.row(r).dot(&cos.row(r)) / (a * a);
        row.scaled_add(k, &y.row(r));
    }
    grad
}

/// Row-wise distances `d(a_i, b_i)`.
pub fn rowwise_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array1<f64> {
    let na = smooth_norms(a);
    let nb = smooth_norms(b);
    Array1::from_shape_fn(a.nrows(), |i| 1.0 - a.row(i).dot(&b.row(i)) / (na[i] * nb[i]))
}

/// Gradients of `Σ grad_i d(a_i, b_i)` with respect to `a` and `b`.
pub fn rowwise_distance_backward(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    grad: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let na = smooth_norms(a);
    let nb = smooth_norms(b);
    let mut ga = Array2::zeros(a.raw_dim());
    let mut gb = Array2::zeros(b.raw_dim());
    for i in 0..a.nrows() {
        let (ar, br) = (a.row(i), b.row(i));
        let cos = ar.dot(&br) / (na[i] * nb[i]);
        let g = grad[i];
        // d(1 - cos)/da = -(b/(|a||b|) - cos a/|a|²)
        let mut row = ga.row_mut(i);
        row.scaled_add(-g / (na[i] * nb[i]), &br);
        row.scaled_add(g * cos / (na[i] * na[i]), &ar);
        let mut row = gb.row_mut(i);
        row.scaled_add(-g / (na[i] * nb[i]), &ar);
        row.scaled_add(g * cos / (nb[i] * nb[i]), &br);
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_distance_cases() {
        assert!(cosine_distance(&[2.0, 0.0], &[1.0, 0.0]).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&[0.0, 1.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        let d = cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn matrix_gradient_matches_finite_differences() {
        let y = array![[0.3, -1.2, 0.8], [1.1, 0.4, -0.5]];
        let s = array![[1.0, 0.0, 0.5], [-0.2, 0.9, 0.1], [0.4, 0.4, -1.0], [0.0, 0.0, 2.0]];
        let w = array![[0.5, -1.0, 2.0, 0.3], [1.0, 0.2, -0.7, 0.9]];
        let f = |y: &Array2<f64>| (distance_matrix(y.view(), s.view()) * &w).sum();
        let g = distance_matrix_backward(y.view(), s.view(), w.view());
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = y.clone();
                p[[i, j]] += eps;
                let mut m = y.clone();
                m[[i, j]] -= eps;
                let fd = (f(&p) - f(&m)) / (2.0 * eps);
                assert!((fd - g[[i, j]]).abs() < 1e-7, "{fd} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn rowwise_gradient_matches_finite_differences() {
        let a = array![[0.3, -1.2, 0.8], [1.1, 0.4, -0.5]];
        let b = array![[1.0, 0.2, 0.5], [-0.2, 0.9, 0.1]];
        let w = array![0.7, -1.3];
        let f = |a: &Array2<f64>, b: &Array2<f64>| rowwise_distance(a.view(), b.view()).dot(&w);
        let (ga, gb) = rowwise_distance_backward(a.view(), b.view(), &w);
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = a.clone();
                p[[i, j]] += eps;
                let mut m = a.clone();
                m[[i, j]] -= eps;
                assert!(((f(&p, &b) - f(&m, &b)) / (2.0 * eps) - ga[[i, j]]).abs() < 1e-7);
                let mut p = b.clone();
                p[[i, j]] += eps;
                let mut m = b.clone();
                m[[i, j]] -= eps;
                assert!(((f(&a, &p) - f(&a, &m)) / (2.0 * eps) - gb[[i, j]]).abs() < 1e-7);
            }
        }
    }
}
