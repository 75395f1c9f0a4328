//! Trains a small lesion RBM on patches of synthetic cases and sweeps three of its units over a case.

use strokepred::rbm::{generate_feature_volumes, patch_rows, train_rbm, RbmGroupSpec, RbmTrainConfig, PATCH_3D};
use strokepred::synth::{generate_case, SyntheticSpec};
use strokepred::volume::{preprocess_case_to, sample_training_patches, SamplingConfig, Volume};

fn main() -> strokepred::Result<()> {
    let spec = SyntheticSpec::default();
    let cases = (0..4)
        .map(|i| preprocess_case_to(&generate_case(&spec, i)?, spec.dims))
        .collect::<strokepred::Result<Vec<_>>>()?;

    let group = RbmGroupSpec::lesion(PATCH_3D);
    let mut rows = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let centers = sample_training_patches(case, 500, i as u64, SamplingConfig::default())?;
        let maps: Vec<&Volume> = group.maps.iter().map(|&k| case.map(k).expect("parametric map")).collect();
        rows.extend(patch_rows(&maps, &centers, group.patch_shape)?);
    }
    let cfg = RbmTrainConfig { n_hidden: 64, learning_rate: 1e-3, epochs: 10, ..Default::default() };
    let (rbm, history) = train_rbm(&rows, &group, &cfg)?;
    println!("{} visible, {} hidden, {} patches", rbm.n_visible, rbm.n_hidden, rows.len() / rbm.n_visible);
    println!("reconstruction error {:.4} -> {:.4}", history.initial_error, history.epochs.last().map_or(f64::NAN, |e| e.train_error));

    let set = generate_feature_volumes(&rbm, &cases[0], &[0, 1, 2])?;
    for (u, v) in set.unit_indices.iter().zip(&set.volumes) {
        let (lo, hi) = v.min_max();
        let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        println!("unit {u}: min {lo:.3} max {hi:.3} mean {mean:.3}");
    }
    Ok(())
}
