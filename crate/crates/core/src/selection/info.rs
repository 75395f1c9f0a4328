//! Histogram estimators of entropy, mutual information and NMI (all in nats).

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::volume::Volume;

pub const DEFAULT_BINS: usize = 64;

/// Equal-width binning of one variable over its own `[min, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    pub bins: usize,
    pub index: Vec<u16>,
    pub edges: Vec<f64>,
}

impl Binned {
    pub fn new(values: &[f32], bins: usize) -> Self {
        assert!(bins >= 1 && bins <= u16::MAX as usize, "bin count out of range");
        let (lo, hi) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (lo, hi) = (lo as f64, hi as f64);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let index = values
            .iter()
            .map(|&v| {
                if hi > lo {
                    (((v as f64 - lo) / width).floor() as usize).min(bins - 1) as u16
                } else {
                    0
                }
            })
            .collect();
        Binned { bins, index, edges }
    }

    pub fn counts(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.bins];
        for &i in &self.index {
            c[i as usize] += 1.0;
        }
        c
    }

    pub fn entropy(&self) -> f64 {
        entropy_from_counts(&self.counts())
    }
}

/// Joint counts of two binned variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub bins_a: usize,
    pub bins_b: usize,
    /// Row-major `bins_a x bins_b`.
    pub counts: Vec<f64>,
    pub edges_a: Vec<f64>,
    pub edges_b: Vec<f64>,
}

impl Histogram2D {
    pub fn from_binned(a: &Binned, b: &Binned) -> Result<Self> {
        if a.index.len() != b.index.len() {
            return shape_err("joint histogram: sample counts differ");
        }
        if a.index.is_empty() {
            return shape_err("joint histogram of empty samples");
        }
        let mut counts = vec![0.0; a.bins * b.bins];
        for (&i, &j) in a.index.iter().zip(&b.index) {
            counts[i as usize * b.bins + j as usize] += 1.0;
        }
        Ok(Histogram2D { bins_a: a.bins, bins_b: b.bins, counts, edges_a: a.edges.clone(), edges_b: b.edges.clone() })
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn joint_entropy(&self) -> f64 {
        entropy_from_counts(&self.counts)
    }
}

pub fn entropy_from_counts(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Shannon entropy of the `bins`-bin histogram of `values`.
pub fn entropy_of(values: &[f32], bins: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    Binned::new(values, bins).entropy()
}

pub fn entropy(map: &Volume, bins: usize) -> f64 {
    entropy_of(map.data(), bins)
}

/// `H(a) + H(b) − H(a, b)` from already-binned variables.
pub fn mutual_information_binned(a: &Binned, b: &Binned) -> Result<f64> {
    let joint = Histogram2D::from_binned(a, b)?;
    Ok(a.entropy() + b.entropy() - joint.joint_entropy())
}

pub fn mutual_information_of(a: &[f32], b: &[f32], bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return shape_err(format!("mutual information: {} vs {} samples", a.len(), b.len()));
    }
    mutual_information_binned(&Binned::new(a, bins), &Binned::new(b, bins))
}

pub fn mutual_information(a: &Volume, b: &Volume, bins: usize) -> Result<f64> {
    if a.dims() != b.dims() {
        return shape_err(format!("mutual information: dims {:?} vs {:?}", a.dims(), b.dims()));
    }
    mutual_information_of(a.data(), b.data(), bins)
}

/// `2 MI / (H(a) + H(b))`; undefined when both variables are constant.
pub fn nmi_sum_binned(a: &Binned, b: &Binned) -> Result<f64> {
    let (ha, hb) = (a.entropy(), b.entropy());
    if ha + hb <= 0.0 {
        return Err(Error::Undefined("NMI of two constant maps".into()));
    }
    let joint = Histogram2D::from_binned(a, b)?;
    let mi = ha + hb - joint.joint_entropy();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

pub fn nmi_sum_of(a: &[f32], b: &[f32], bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return shape_err(format!("NMI: {} vs {} samples", a.len(), b.len()));
    }
    nmi_sum_binned(&Binned::new(a, bins), &Binned::new(b, bins))
}

pub fn nmi_sum(a: &Volume, b: &Volume, bins: usize) -> Result<f64> {
    if a.dims() != b.dims() {
        return shape_err(format!("NMI: dims {:?} vs {:?}", a.dims(), b.dims()));
    }
    nmi_sum_of(a.data(), b.data(), bins)
}

/// How a feature's NMI against a multi-map group collapses to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupAggregate {
    Max,
    Mean,
}

/// NMI between a feature and each of the group's maps, aggregated.
pub fn feature_nmi_to_group_binned(feature: &Binned, maps: &[Binned], agg: GroupAggregate) -> Result<f64> {
    if maps.is_empty() {
        return shape_err("feature_nmi_to_group: empty group");
    }
    let scores = maps.iter().map(|m| nmi_sum_binned(m, feature)).collect::<Result<Vec<_>>>()?;
    Ok(match agg {
        GroupAggregate::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        GroupAggregate::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

pub fn feature_nmi_to_group(feature: &Volume, maps: &[&Volume], bins: usize, agg: GroupAggregate) -> Result<f64> {
    if maps.iter().any(|m| m.dims() != feature.dims()) {
        return shape_err("feature_nmi_to_group: dims mismatch");
    }
    let f = Binned::new(feature.data(), bins);
    let binned: Vec<Binned> = maps.iter().map(|m| Binned::new(m.data(), bins)).collect();
    feature_nmi_to_group_binned(&f, &binned, agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::MapKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(data: Vec<f32>) -> Volume {
        let n = data.len();
        Volume::new([n, 1, 1], [1.0; 3], MapKind::Feature, data).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_of(&[3.0; 10], 64), 0.0);
        let two: Vec<f32> = (0..100).map(|i| if i < 50 { 0.0 } else { 1.0 }).collect();
        assert!((entropy_of(&two, 64) - 2f64.ln()).abs() < 1e-12);
        // Four occupied bins with equal counts: direct count oracle gives -4 * (1/4) ln(1/4).
        let four: Vec<f32> = (0..400).map(|i| (i % 4) as f32).collect();
        let oracle = -4.0 * 0.25 * 0.25f64.ln();
        assert!((entropy_of(&four, 64) - oracle).abs() < 1e-12);
        assert!((oracle - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn self_information_and_nmi_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f32> = (0..5000).map(|_| rng.random_range(0.0..10.0)).collect();
        let mi = mutual_information_of(&x, &x, 64).unwrap();
        assert!((mi - entropy_of(&x, 64)).abs() < 1e-9);
        assert!((nmi_sum_of(&x, &x, 64).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn monotone_transform_with_distinct_bins() {
        let a: Vec<f32> = (0..800).map(|i| (i % 8) as f32).collect();
        let b: Vec<f32> = a.iter().map(|v| v * v).collect();
        // b's 8 levels 0,1,4,..,49 land in distinct bins of width 49/64, so the
        // joint histogram is diagonal and H(a, b) = H(a).
        let ba = Binned::new(&a, 64);
        let bb = Binned::new(&b, 64);
        let joint = Histogram2D::from_binned(&ba, &bb).unwrap();
        let occupied = joint.counts.iter().filter(|&&c| c > 0.0).count();
        assert_eq!(occupied, 8);
        let mi = mutual_information_of(&a, &b, 64).unwrap();
        assert!((mi - entropy_of(&a, 64)).abs() < 1e-12);
    }

    #[test]
    fn independent_maps_have_small_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let a: Vec<f32> = (0..n).map(|_| rng.random()).collect();
        let b: Vec<f32> = (0..n).map(|_| rng.random()).collect();
        let mi = mutual_information_of(&a, &b, 64).unwrap();
        assert!(mi < 0.01 && mi >= -1e-12, "mi {mi}");
    }

    #[test]
    fn nmi_edge_cases() {
        let c = vol(vec![1.0; 20]);
        let x = vol((0..20).map(|i| i as f32).collect());
        assert_eq!(nmi_sum(&c, &x, 64).unwrap(), 0.0);
        assert!(matches!(nmi_sum(&c, &c, 64), Err(Error::Undefined(_))));
        assert!(nmi_sum(&x, &vol(vec![0.0; 3]), 64).is_err());
    }

    #[test]
    fn group_nmi_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = vol((0..4000).map(|_| rng.random_range(0.0..1.0)).collect());
        let b = vol((0..4000).map(|_| rng.random_range(0.0..1.0)).collect());
        let indep = vol((0..4000).map(|_| rng.random_range(0.0..1.0)).collect());
        let s = feature_nmi_to_group(&a, &[&a, &b], 64, GroupAggregate::Max).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        let s = feature_nmi_to_group(&indep, &[&a, &b], 16, GroupAggregate::Max).unwrap();
        assert!(s < 0.05, "independent feature scored {s}");
        let single = feature_nmi_to_group(&b, &[&a], 64, GroupAggregate::Max).unwrap();
        assert_eq!(single, nmi_sum(&a, &b, 64).unwrap());
    }

    proptest! {
        #[test]
        fn nmi_is_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f32> = (0..300).map(|_| rng.random_range(0.0..5.0)).collect();
            let b: Vec<f32> = a.iter().map(|v| v + rng.random_range(0.0..2.0)).collect();
            let ab = nmi_sum_of(&a, &b, 16).unwrap();
            let ba = nmi_sum_of(&b, &a, 16).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn nmi_of_self_is_one(seed in 0u64..1000, n in 2usize..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x: Vec<f32> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            x[0] = -4.0;
            x[1] = 4.0;
            prop_assert!((nmi_sum_of(&x, &x, 64).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
