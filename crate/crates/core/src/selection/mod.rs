//! Ranking of RBM hidden units by NMI against the input maps fused with random-forest MDI.

mod forest;
mod info;

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use forest::{mdi_importances, train_random_forest, DecisionTree, ForestConfig, Node, RandomForest};
pub use info::{
    entropy, entropy_from_counts, entropy_of, feature_nmi_to_group, feature_nmi_to_group_binned, mutual_information,
    mutual_information_binned, mutual_information_of, nmi_sum, nmi_sum_binned, nmi_sum_of, Binned, GroupAggregate,
    Histogram2D, DEFAULT_BINS,
};

use crate::error::{shape_err, Error, Result};
use crate::volume::io::{read_json, write_json};

pub const DEFAULT_SELECTED: usize = 6;
pub const DEFAULT_MAX_ROWS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub group: String,
    pub nmi_scores: Vec<f64>,
    pub mdi_scores: Vec<f64>,
    pub fused: Vec<f64>,
    pub selected: Vec<usize>,
}

impl SelectionResult {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn max_normalized(s: &[f64]) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m > 0.0 && m.is_finite() {
        s.iter().map(|v| v / m).collect()
    } else {
        vec![0.0; s.len()]
    }
}

/// Max-normalizes both lists, sums them and keeps the `m` best units (ties to the lower index).
pub fn fuse_and_select(group: &str, nmi: &[f64], mdi: &[f64], m: usize) -> Result<SelectionResult> {
    if nmi.len() != mdi.len() {
        return shape_err(format!("fuse_and_select: {} NMI vs {} MDI scores", nmi.len(), mdi.len()));
    }
    if m > nmi.len() {
        return Err(Error::Config(format!("cannot select {m} of {} features", nmi.len())));
    }
    let fused: Vec<f64> = max_normalized(nmi).iter().zip(max_normalized(mdi)).map(|(a, b)| a + b).collect();
    let mut order: Vec<usize> = (0..fused.len()).collect();
    order.sort_by(|&a, &b| fused[b].total_cmp(&fused[a]).then(a.cmp(&b)));
    order.truncate(m);
    Ok(SelectionResult {
        group: group.to_string(),
        nmi_scores: nmi.to_vec(),
        mdi_scores: mdi.to_vec(),
        fused,
        selected: order,
    })
}

/// Picks at most `max_rows` of `candidates`, keeping the positive/negative proportion.
pub fn stratified_sample(candidates: &[usize], labels: &[bool], max_rows: usize, seed: u64) -> Vec<usize> {
    if candidates.len() <= max_rows {
        return candidates.to_vec();
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = candidates.iter().partition(|&&i| labels[i]);
    let frac = max_rows as f64 / candidates.len() as f64;
    let mut n_pos = ((pos.len() as f64 * frac).round() as usize).min(pos.len());
    if n_pos == 0 && !pos.is_empty() {
        n_pos = 1;
    }
    let n_neg = (max_rows - n_pos.min(max_rows)).min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = sample_indices(&mut rng, pos.len(), n_pos).into_iter().map(|i| pos[i]).collect();
    out.extend(sample_indices(&mut rng, neg.len(), n_neg).into_iter().map(|i| neg[i]));
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub bins: usize,
    pub aggregate: GroupAggregate,
    pub n_selected: usize,
    pub forest: ForestConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            bins: DEFAULT_BINS,
            aggregate: GroupAggregate::Max,
            n_selected: DEFAULT_SELECTED,
            forest: ForestConfig::default(),
        }
    }
}

/// Scores every hidden unit from sampled voxel rows and selects the top units.
///
/// `activations` is row-major `n_rows x n_units`; `maps` holds one column of
/// `n_rows` input-map values per group map.
pub fn select_units(
    group: &str,
    activations: &[f32],
    n_units: usize,
    maps: &[Vec<f32>],
    labels: &[bool],
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    let n = labels.len();
    if n_units == 0 || activations.len() != n * n_units {
        return shape_err(format!("select_units: {} activations for {n} rows x {n_units} units", activations.len()));
    }
    if maps.iter().any(|m| m.len() != n) {
        return shape_err("select_units: map columns disagree with row count");
    }
    let binned_maps: Vec<Binned> = maps.iter().map(|m| Binned::new(m, cfg.bins)).collect();
    let nmi = (0..n_units)
        .into_par_iter()
        .map(|u| {
            let col: Vec<f32> = (0..n).map(|r| activations[r * n_units + u]).collect();
            let f = Binned::new(&col, cfg.bins);
            match feature_nmi_to_group_binned(&f, &binned_maps, cfg.aggregate) {
                Err(Error::Undefined(_)) => Ok(0.0),
                r => r,
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let rf = train_random_forest(activations, labels, n_units, &cfg.forest)?;
    let mdi = mdi_importances(&rf);
    fuse_and_select(group, &nmi, &mdi, cfg.n_selected)
}
