//! Dense per-voxel feature generation from a trained machine.

use rayon::prelude::*;

use super::{nrelu_mean, Rbm};
use crate::error::{shape_err, Error, Result};
use crate::volume::{extract_patch, Dims, MapKind, PreprocessedCase, Volume};

/// Feature volumes of the selected hidden units of one machine.
#[derive(Debug, Clone)]
pub struct FeatureVolumeSet {
    pub source_rbm: String,
    pub unit_indices: Vec<usize>,
    pub volumes: Vec<Volume>,
}

fn half(len: usize) -> isize {
    (len / 2) as isize
}

/// Writes the zero-padded raw patch around `center` into `out` (channel-major, x fastest).
fn fill_row(maps: &[&Volume], center: [usize; 3], shape: Dims, out: &mut [f64]) {
    let o = [
        center[0] as isize - half(shape[0]),
        center[1] as isize - half(shape[1]),
        center[2] as isize - half(shape[2]),
    ];
    let mut k = 0;
    for m in maps {
        for dz in 0..shape[2] as isize {
            for dy in 0..shape[1] as isize {
                for dx in 0..shape[0] as isize {
                    out[k] = m.get_padded(o[0] + dx, o[1] + dy, o[2] + dz) as f64;
                    k += 1;
                }
            }
        }
    }
}

fn group_maps<'a>(rbm: &Rbm, case: &'a PreprocessedCase) -> Result<Vec<&'a Volume>> {
    rbm.spec
        .maps
        .iter()
        .map(|&k| {
            case.map(k).ok_or_else(|| {
                Error::Data(format!("case {}: group {} needs {k:?}", case.case_id, rbm.spec.name))
            })
        })
        .collect()
}

/// Raw (unstandardized) visible vectors at `centers`, flat `n x n_visible`.
pub fn patch_rows(maps: &[&Volume], centers: &[[usize; 3]], shape: Dims) -> Result<Vec<f64>> {
    let Some(first) = maps.first() else {
        return shape_err("patch_rows needs at least one map");
    };
    let dims = first.dims();
    if maps.iter().any(|m| m.dims() != dims) {
        return shape_err("patch_rows: maps disagree on dims");
    }
    let m = shape.iter().product::<usize>() * maps.len();
    let mut rows = vec![0.0; centers.len() * m];
    for (c, row) in centers.iter().zip(rows.chunks_exact_mut(m)) {
        if (0..3).any(|a| c[a] >= dims[a]) {
            return shape_err(format!("patch centre {c:?} outside {dims:?}"));
        }
        fill_row(maps, *c, shape, row);
    }
    Ok(rows)
}

/// Noise-free activations of every hidden unit at `centers`, flat `n x n_hidden`.
pub fn hidden_activations_at(rbm: &Rbm, case: &PreprocessedCase, centers: &[[usize; 3]]) -> Result<Vec<f64>> {
    let maps = group_maps(rbm, case)?;
    let mut rows = patch_rows(&maps, centers, rbm.spec.patch_shape)?;
    rbm.stats.apply_in_place(&mut rows);
    Ok(nrelu_mean(&rbm.hidden_preactivation_batch(&rows, centers.len())))
}

/// Sweeps every voxel of `case`, keeping the activations of `unit_indices`.
pub fn generate_feature_volumes(
    rbm: &Rbm,
    case: &PreprocessedCase,
    unit_indices: &[usize],
) -> Result<FeatureVolumeSet> {
    if let Some(&bad) = unit_indices.iter().find(|&&u| u >= rbm.n_hidden) {
        return Err(Error::Config(format!("unit {bad} out of range for {} hidden units", rbm.n_hidden)));
    }
    let maps = group_maps(rbm, case)?;
    let dims = case.dims();
    if unit_indices.is_empty() {
        return Ok(FeatureVolumeSet { source_rbm: rbm.spec.name.clone(), unit_indices: vec![], volumes: vec![] });
    }
    let m = rbm.n_visible;
    let [nx, ny, nz] = dims;
    let shape = rbm.spec.patch_shape;
    let h = [half(shape[0]), half(shape[1]), half(shape[2])];
    let data: Vec<Vec<f32>> = unit_indices
        .iter()
        .map(|&u| {
            // Standardization folds into the kernel: w / sd, with the mean term moved into the bias.
            let w = &rbm.weights[u * m..(u + 1) * m];
            let kernel: Vec<f64> = w.iter().zip(&rbm.stats.std).map(|(w, sd)| w / sd).collect();
            let bias = rbm.hid_bias[u] - kernel.iter().zip(&rbm.stats.mean).map(|(k, mu)| k * mu).sum::<f64>();
            let slices: Vec<Vec<f32>> = (0..nz)
                .into_par_iter()
                .map(|z| {
                    let mut acc = vec![bias; nx * ny];
                    let mut j = 0;
                    for map in &maps {
                        let src = map.data();
                        for dz in 0..shape[2] {
                            let sz = z as isize + dz as isize - h[2];
                            for dy in 0..shape[1] {
                                for dx in 0..shape[0] {
                                    let kv = kernel[j];
                                    j += 1;
                                    if sz < 0 || sz >= nz as isize {
                                        continue;
                                    }
                                    let off = dx as isize - h[0];
                                    let (x0, x1) = ((-off).max(0) as usize, (nx as isize - off).min(nx as isize) as usize);
                                    for y in 0..ny {
                                        let sy = y as isize + dy as isize - h[1];
                                        if sy < 0 || sy >= ny as isize || x0 >= x1 {
                                            continue;
                                        }
                                        let row = &src[(sz as usize * ny + sy as usize) * nx..][..nx];
                                        let out = &mut acc[y * nx..(y + 1) * nx];
                                        let from = (x0 as isize + off) as usize;
                                        for (o, &v) in out[x0..x1].iter_mut().zip(&row[from..from + (x1 - x0)]) {
                                            *o += kv * v as f64;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    acc.into_iter().map(|v| v.max(0.0) as f32).collect()
                })
                .collect();
            slices.concat()
        })
        .collect();
    let volumes = data
        .into_iter()
        .map(|d| Volume::new(dims, case.spacing(), MapKind::Feature, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureVolumeSet { source_rbm: rbm.spec.name.clone(), unit_indices: unit_indices.to_vec(), volumes })
}

/// One feature value from an explicitly extracted patch; slow, for spot checks.
pub fn naive_feature_at(rbm: &Rbm, case: &PreprocessedCase, center: [usize; 3], unit: usize) -> Result<f64> {
    let maps = group_maps(rbm, case)?;
    let patch = extract_patch(&maps, center, rbm.spec.patch_shape)?;
    let raw: Vec<f64> = patch.data.iter().map(|&v| v as f64).collect();
    let v = super::standardize(&raw, &rbm.stats)?;
    let x = rbm.hidden_preactivation(&v)?;
    Ok(nrelu_mean(&x)[unit])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::{RbmGroupSpec, Standardizer, PATCH_3D};
    use crate::volume::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(dims: Dims, seed: u64) -> PreprocessedCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        let maps = MapKind::PARAMETRIC
            .iter()
            .map(|&k| Volume::new(dims, [1.0; 3], k, (0..n).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap())
            .collect();
        PreprocessedCase {
            case_id: "r".into(),
            maps,
            gt: None,
            provenance: Provenance { original_dims: dims, original_spacing: [1.0; 3] },
        }
    }

    #[test]
    fn default_selection_yields_six_volumes() {
        let case = random_case([9, 8, 4], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rbm = Rbm::new(RbmGroupSpec::lesion(PATCH_3D), 20, 0.01, &mut rng).unwrap();
        let set = generate_feature_volumes(&rbm, &case, &[0, 3, 5, 7, 11, 19]).unwrap();
        assert_eq!(set.volumes.len(), 6);
        for v in &set.volumes {
            assert_eq!(v.dims(), [9, 8, 4]);
            assert!(v.data().iter().all(|&x| x >= 0.0));
        }
        assert!(generate_feature_volumes(&rbm, &case, &[20]).is_err());
    }

    #[test]
    fn zero_weights_unit_bias_give_constant_one() {
        let case = random_case([5, 5, 3], 3);
        let spec = RbmGroupSpec::haemo(PATCH_3D);
        let m = spec.n_visible();
        let rbm = Rbm::from_parts(spec, vec![0.0; 4 * m], vec![0.0; m], vec![1.0; 4], Standardizer::identity(m))
            .unwrap();
        let set = generate_feature_volumes(&rbm, &case, &[0, 2]).unwrap();
        for v in &set.volumes {
            assert!(v.data().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn sweep_matches_naive_per_voxel_oracle() {
        let case = random_case([11, 10, 5], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = RbmGroupSpec::lesion(PATCH_3D);
        let m = spec.n_visible();
        let mut rbm = Rbm::new(spec, 12, 0.05, &mut rng).unwrap();
        rbm.hid_bias = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
        rbm.stats = Standardizer {
            mean: (0..m).map(|_| rng.random_range(100.0..150.0)).collect(),
            std: (0..m).map(|_| rng.random_range(50.0..80.0)).collect(),
            flagged: vec![],
        };
        let units = [1, 4, 9];
        let set = generate_feature_volumes(&rbm, &case, &units).unwrap();
        for _ in 0..100 {
            let c = [rng.random_range(0..11), rng.random_range(0..10), rng.random_range(0..5)];
            for (slot, &u) in units.iter().enumerate() {
                let want = naive_feature_at(&rbm, &case, c, u).unwrap();
                let got = set.volumes[slot].get(c[0], c[1], c[2]) as f64;
                assert!((want - got).abs() <= 1e-5 * (1.0 + want.abs()), "{want} vs {got}");
            }
        }
    }

    #[test]
    fn missing_group_map_is_error() {
        let mut case = random_case([4, 4, 2], 6);
        case.maps.truncate(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rbm = Rbm::new(RbmGroupSpec::haemo(PATCH_3D), 3, 0.01, &mut rng).unwrap();
        assert!(generate_feature_volumes(&rbm, &case, &[0]).is_err());
    }
}
