//! Central finite differences for checking hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Smallest distance from a kink that keeps both difference points on one linear piece.
pub const KINK_MARGIN: f64 = 3.0 * FD_STEP;
/// Magnitude below which both gradients count as zero for the relative error.
pub const FD_FLOOR: f64 = 1e-6;

/// Uniform `[-1, 1)` tensor.
pub fn rand_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor { n, c, h, w, data }
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + FD_STEP;
            let up = f(&v);
            v[i] = orig - FD_STEP;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max)
}

#[cfg(test)]
pub(crate) fn check_input_grad(x: &[f64], analytic: &[f64], f: impl FnMut(&[f64]) -> f64) {
    assert_eq!(x.len(), analytic.len());
    let numeric = numeric_gradient(x, f);
    let err = max_relative_error(analytic, &numeric);
    assert!(err < FD_TOLERANCE, "max relative error {err:e}");
}
