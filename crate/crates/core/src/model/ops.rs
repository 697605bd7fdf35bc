//! Dense building blocks with hand-written backward passes. Weights follow
//! the `out × in` layout of PyTorch `Linear` so checkpoints load unchanged.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

pub fn linear(x: &Array2<f32>, w: ArrayView2<f32>, b: ArrayView1<f32>) -> Array2<f32> {
    x.dot(&w.t()) + b
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn linear_backward(
    x: &Array2<f32>,
    w: ArrayView2<f32>,
    dy: &Array2<f32>,
    mut gw: ArrayViewMut2<f32>,
    mut gb: ArrayViewMut1<f32>,
) -> Array2<f32> {
    gw += &dy.t().dot(x);
    gb += &dy.sum_axis(Axis(0));
    dy.dot(&w)
}

pub struct LayerNormCache {
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
}

pub fn layer_norm(
    x: &Array2<f32>,
    gamma: ArrayView1<f32>,
    beta: ArrayView1<f32>,
    eps: f32,
) -> (Array2<f32>, LayerNormCache) {
    let width = x.ncols() as f32;
    let mean = x.sum_axis(Axis(1)) / width;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / width;
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = centered * inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: ArrayView1<f32>,
    dy: &Array2<f32>,
    mut ggamma: ArrayViewMut1<f32>,
    mut gbeta: ArrayViewMut1<f32>,
) -> Array2<f32> {
    let width = dy.ncols() as f32;
    ggamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    gbeta += &dy.sum_axis(Axis(0));
    let dxhat = dy * &gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
    let scale = cache.inv_std.view().insert_axis(Axis(1)).mapv(|s| s / width);
    (dxhat * width - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &scale
}

const FRAC_1_SQRT_2: f32 = std::f32::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f32 = 0.398_942_3;

/// Exact (erf) GELU, as used by BERT.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f32) -> f32 {
    0.5 * (1.0 + libm::erff(x * FRAC_1_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Row-wise softmax in place.
pub fn softmax_rows(m: &mut Array2<f32>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Gradient of the row-wise softmax given its output `p` and upstream `dp`.
pub fn softmax_rows_backward(p: &Array2<f32>, dp: &Array2<f32>) -> Array2<f32> {
    let dot = (p * dp).sum_axis(Axis(1)).insert_axis(Axis(1));
    p * &(dp - &dot)
}

/// Softmax of a logit vector, computed in f64.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(f32) -> f32, x: f32) -> f32 {
        let h = 1e-3;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0f32, -1.0, -0.2, 0.0, 0.5, 2.0] {
            assert!((gelu_grad(x) - numeric_grad(gelu, x)).abs() < 1e-3, "x={x}");
        }
        assert!((gelu(1.0) - 0.841_344_7).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_backward_matches_finite_difference() {
        let x = array![[0.3f32, -1.2, 0.7, 2.0], [1.0, 0.0, -0.5, 0.25]];
        let gamma = array![1.0f32, 0.5, -0.3, 2.0];
        let beta = array![0.1f32, 0.0, 0.2, -0.1];
        let weights = array![[0.2f32, -0.7, 1.1, 0.4], [0.9, 0.3, -0.2, 0.6]];
        let loss = |x: &Array2<f32>| -> f32 {
            let (y, _) = layer_norm(x, gamma.view(), beta.view(), 1e-5);
            (&y * &weights).sum()
        };
        let (_, cache) = layer_norm(&x, gamma.view(), beta.view(), 1e-5);
        let mut gg = Array1::zeros(4);
        let mut gb = Array1::zeros(4);
        let dx = layer_norm_backward(&cache, gamma.view(), &weights, gg.view_mut(), gb.view_mut());
        for i in 0..2 {
            for j in 0..4 {
                let mut plus = x.clone();
                plus[[i, j]] += 1e-2;
                let mut minus = x.clone();
                minus[[i, j]] -= 1e-2;
                let num = (loss(&plus) - loss(&minus)) / 2e-2;
                assert!((dx[[i, j]] - num).abs() < 2e-3, "({i},{j}) {} vs {num}", dx[[i, j]]);
            }
        }
        assert_eq!(gb, weights.sum_axis(Axis(0)));
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
        let mut m = array![[1.0f32, 2.0, 3.0], [0.0, 0.0, 0.0]];
        softmax_rows(&mut m);
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }
}
