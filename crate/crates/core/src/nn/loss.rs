use crate::error::{shape_err, Result};
use crate::linalg::Real;

pub const DICE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub loss: T,
    /// d loss / d p
    pub grad: Vec<T>,
}

/// `1 − (2 Σ p g + ε) / (Σ p² + Σ g² + ε)` over all given voxels.
pub fn soft_dice_loss<T: Real>(p: &[T], g: &[T]) -> Result<LossValue<T>> {
    if p.len() != g.len() {
        return shape_err(format!("soft_dice_loss: {} predictions vs {} labels", p.len(), g.len()));
    }
    let eps = T::lit(DICE_EPS);
    let two = T::lit(2.0);
    let mut pg = T::zero();
    let mut pp = T::zero();
    let mut gg = T::zero();
    for (&a, &b) in p.iter().zip(g) {
        pg += a * b;
        pp += a * a;
        gg += b * b;
    }
    let num = two * pg + eps;
    let den = pp + gg + eps;
    let loss = T::one() - num / den;
    let den2 = den * den;
    let grad = p.iter().zip(g).map(|(&a, &b)| -(two * b * den - num * two * a) / den2).collect();
    Ok(LossValue { loss, grad })
}

/// Per-sample soft Dice averaged over a batch of `n` equally sized samples.
pub fn batch_soft_dice<T: Real>(p: &[T], g: &[T], n: usize) -> Result<LossValue<T>> {
    if n == 0 || p.len() % n != 0 || p.len() != g.len() {
        return shape_err("batch_soft_dice: lengths not divisible by batch size");
    }
    let per = p.len() / n;
    let scale = T::one() / T::from_usize(n).expect("batch size");
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(p.len());
    for (ps, gs) in p.chunks_exact(per).zip(g.chunks_exact(per)) {
        let l = soft_dice_loss(ps, gs)?;
        loss += l.loss * scale;
        grad.extend(l.grad.into_iter().map(|v| v * scale));
    }
    Ok(LossValue { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input_grad, rand_tensor};
    use proptest::prelude::*;

    #[test]
    fn dice_examples() {
        let g = [1.0f64, 0.0, 1.0, 1.0];
        assert!(soft_dice_loss(&g, &g).unwrap().loss.abs() < 1e-12);
        let l = soft_dice_loss(&[0.0; 4], &g).unwrap().loss;
        assert!((l - 1.0).abs() < 1e-7);
        let l = soft_dice_loss(&[0.5f64; 4], &[1.0, 1.0, 0.0, 0.0]).unwrap().loss;
        let oracle = 1.0 - (2.0 * 1.0 + DICE_EPS) / (1.0 + 2.0 + DICE_EPS);
        assert!((l - oracle).abs() < 1e-15);
        assert!((l - (1.0 - 2.0 / 3.0)).abs() < 1e-7);
    }

    #[test]
    fn dice_gradient() {
        let p: Vec<f64> = rand_tensor(1, 1, 1, 12, 1).data.iter().map(|v| (v + 1.0) / 2.0).collect();
        let g: Vec<f64> = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let l = soft_dice_loss(&p, &g).unwrap();
        check_input_grad(&p, &l.grad, |v| soft_dice_loss(v, &g).unwrap().loss);
        let b = batch_soft_dice(&p, &g, 3).unwrap();
        check_input_grad(&p, &b.grad, |v| batch_soft_dice(v, &g, 3).unwrap().loss);
    }

    proptest! {
        #[test]
        fn dice_in_unit_interval(p in proptest::collection::vec(0.0f64..=1.0, 1..50), seed in 0u64..100) {
            let g: Vec<f64> = p.iter().enumerate().map(|(i, _)| ((i as u64 * 31 + seed) % 3 == 0) as u8 as f64).collect();
            let l = soft_dice_loss(&p, &g).unwrap().loss;
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn dice_zero_only_for_exact_binary_match(bits in proptest::collection::vec(any::<bool>(), 1..40), flip in 0usize..40) {
            let g: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
            prop_assert!(soft_dice_loss(&g, &g).unwrap().loss.abs() < 1e-9);
            let mut p = g.clone();
            let k = flip % p.len();
            p[k] = 1.0 - p[k];
            prop_assert!(soft_dice_loss(&p, &g).unwrap().loss > 1e-3);
        }
    }
}
