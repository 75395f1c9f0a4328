//! Desk-scale pseudo-stroke cases.
//!
//! Every case has a hypointense ADC core nested in a larger perfusion deficit
//! (delayed MTT/TTP/Tmax, depressed rCBV/rCBF). A hidden reperfusion flag decides
//! the final lesion: the core on success, the whole deficit on failure. The flag
//! is visible only in a per-slice rCBF and rCBV offset across the brain: its sign
//! alternates between slices on success and stays fixed on failure, so a
//! single axial slice cannot reveal it but a 3D patch can. A few
//! noise-free vessel voxels pin the perfusion maxima, so per-volume rescaling does
//! not leak the flag into single slices either.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::io::write_json;
use crate::volume::{save_case, Dims, MapKind, PatientCase, Spacing, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    pub n_cases: usize,
    /// In-plane deficit radius range, voxels.
    pub radius_range: (f64, f64),
    /// Through-plane deficit radius range, voxels.
    pub z_radius_range: (f64, f64),
    /// Core radii as a fraction of the deficit radii.
    pub core_ratio_range: (f64, f64),
    pub min_core_voxels: usize,
    pub success_probability: f64,
    pub empty_lesion_probability: f64,
    /// Gaussian noise std as a fraction of each map's healthy level.
    pub noise_sigma: f64,
    /// Per-slice perfusion offset as a fraction of the healthy level.
    pub texture_amplitude: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dims: [64, 64, 8],
            spacing: [1.0, 1.0, 3.0],
            n_cases: 50,
            radius_range: (10.0, 14.0),
            z_radius_range: (2.8, 3.6),
            core_ratio_range: (0.55, 0.7),
            min_core_voxels: 300,
            success_probability: 0.5,
            empty_lesion_probability: 0.0,
            noise_sigma: 0.03,
            texture_amplitude: 0.4,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.dims.iter().any(|&d| d == 0) {
            return bad("dims must be positive");
        }
        for (name, p) in [
            ("success_probability", self.success_probability),
            ("empty_lesion_probability", self.empty_lesion_probability),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        let ranges = [self.radius_range, self.z_radius_range, self.core_ratio_range];
        if ranges.iter().any(|&(a, b)| !(a > 0.0 && a <= b)) || self.core_ratio_range.1 >= 1.0 {
            return bad("radius ranges must be positive and ordered, core ratio below 1");
        }
        let brain = brain_radii(self.dims);
        if self.radius_range.0 >= brain[0].min(brain[1]) || self.z_radius_range.0 > brain[2] {
            return bad("lesion radii do not fit inside the brain");
        }
        if self.noise_sigma < 0.0 || self.texture_amplitude < 0.0 {
            return bad("noise and texture amplitudes must be nonnegative");
        }
        Ok(())
    }
}

/// Healthy / deficit levels per parametric map, in `MapKind::PARAMETRIC` order.
const HEALTHY: [f32; 6] = [800.0, 4.0, 10.0, 2.0, 4.0, 50.0];
const DEFICIT: [f32; 6] = [800.0, 8.0, 18.0, 10.0, 2.5, 25.0];
const CORE_ADC: f32 = 400.0;
const MAX_DRAWS: usize = 100;
const VESSEL_VOXELS: usize = 16;
const VESSEL_GAIN: f32 = 2.0;

fn brain_center(d: Dims) -> [f64; 3] {
    [(d[0] as f64 - 1.0) / 2.0, (d[1] as f64 - 1.0) / 2.0, (d[2] as f64 - 1.0) / 2.0]
}

fn brain_radii(d: Dims) -> [f64; 3] {
    [0.45 * d[0] as f64, 0.45 * d[1] as f64, 0.5 * d[2] as f64 + 0.5]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x as f64, y as f64, z as f64];
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
    }

    fn mask(&self, d: Dims) -> Vec<bool> {
        let mut m = Vec::with_capacity(d[0] * d[1] * d[2]);
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    m.push(self.contains(x, y, z));
                }
            }
        }
        m
    }
}

/// A generated case together with the geometry and hidden flag behind it.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub case: PatientCase,
    pub success: bool,
    pub core: Vec<bool>,
    pub penumbra: Vec<bool>,
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:03}")
}

fn draw_geometry(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, brain: &[bool]) -> Result<(Vec<bool>, Vec<bool>)> {
    let d = spec.dims;
    let bc = brain_center(d);
    let br = brain_radii(d);
    for _ in 0..MAX_DRAWS {
        let r = rng.random_range(spec.radius_range.0..=spec.radius_range.1);
        let rz = rng.random_range(spec.z_radius_range.0..=spec.z_radius_range.1);
        let radii = [r * rng.random_range(0.9..=1.1), r * rng.random_range(0.9..=1.1), rz];
        let center = [
            bc[0] + rng.random_range(-1.0..=1.0) * (br[0] - radii[0]).max(0.0),
            bc[1] + rng.random_range(-1.0..=1.0) * (br[1] - radii[1]).max(0.0),
            bc[2] + rng.random_range(-0.5..=0.5),
        ];
        let pen = Ellipsoid { center, radii };
        let k = rng.random_range(spec.core_ratio_range.0..=spec.core_ratio_range.1);
        let core = Ellipsoid {
            center: [center[0] + rng.random_range(-1.0..=1.0), center[1] + rng.random_range(-1.0..=1.0), center[2]],
            radii: [radii[0] * k, radii[1] * k, radii[2] * k.max(0.75)],
        };
        let pm = pen.mask(d);
        let cm = core.mask(d);
        let inside_brain = pm.iter().zip(brain).all(|(&p, &b)| !p || b);
        let nested = cm.iter().zip(&pm).all(|(&c, &p)| !c || p);
        let n_core = cm.iter().filter(|&&c| c).count();
        let n_pen = pm.iter().filter(|&&p| p).count();
        if inside_brain && nested && n_core >= spec.min_core_voxels && n_pen > n_core {
            return Ok((cm, pm));
        }
    }
    Err(Error::Config(format!("synthetic geometry infeasible after {MAX_DRAWS} draws")))
}

/// Case `index` of the dataset described by `spec`; fully determined by `(seed, index)`.
pub fn generate_case_detailed(spec: &SyntheticSpec, index: usize) -> Result<SyntheticCase> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let d = spec.dims;
    let n = d[0] * d[1] * d[2];
    let brain = Ellipsoid { center: brain_center(d), radii: brain_radii(d) }.mask(d);
    let empty = rng.random_bool(spec.empty_lesion_probability);
    let (core, penumbra) = if empty { (vec![false; n], vec![false; n]) } else { draw_geometry(spec, &mut rng, &brain)? };
    let success = rng.random_bool(spec.success_probability);
    let phase = rng.random_range(0..2usize);
    let healthy: Vec<usize> = (0..n).filter(|&i| brain[i] && !penumbra[i]).collect();
    let mut vessel = vec![false; n];
    for _ in 0..VESSEL_VOXELS {
        vessel[healthy[rng.random_range(0..healthy.len())]] = true;
    }
    let noise = Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut maps = Vec::with_capacity(6);
    for (m, kind) in MapKind::PARAMETRIC.into_iter().enumerate() {
        let sigma = spec.noise_sigma * HEALTHY[m] as f64;
        let mut data = vec![0.0f32; n];
        for (i, v) in data.iter_mut().enumerate() {
            if !brain[i] {
                continue;
            }
            let mut level = if penumbra[i] { DEFICIT[m] } else { HEALTHY[m] };
            if kind == MapKind::Adc && core[i] {
                level = CORE_ADC;
            }
            let perfusion = matches!(kind, MapKind::Rcbf | MapKind::Rcbv);
            if perfusion && vessel[i] {
                *v = VESSEL_GAIN * HEALTHY[m];
                continue;
            }
            if perfusion {
                let z = i / (d[0] * d[1]);
                let parity = (phase + if success { z } else { 0 }) % 2;
                let sign = if parity == 0 { 1.0 } else { -1.0 };
                level += sign * spec.texture_amplitude as f32 * HEALTHY[m];
            }
            *v = (level as f64 + sigma * noise.sample(&mut rng)).max(1e-3) as f32;
        }
        maps.push(Volume::new(d, spec.spacing, kind, data)?);
    }
    let gt_set = if success { &core } else { &penumbra };
    let gt = Volume::new(d, spec.spacing, MapKind::Mask, gt_set.iter().map(|&b| b as u8 as f32).collect())?;
    let case = PatientCase::new(case_id(index), maps, Some(gt))?;
    Ok(SyntheticCase { case, success, core, penumbra })
}

pub fn generate_case(spec: &SyntheticSpec, index: usize) -> Result<PatientCase> {
    Ok(generate_case_detailed(spec, index)?.case)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    pub success: bool,
    pub lesion_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub cases: Vec<ManifestEntry>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Seeded split of `ids` with `round(fraction · n)` held out, both sides kept in index order.
pub fn split_ids(ids: &[String], fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (ids.len() as f64 * fraction).round() as usize;
    let mut held: Vec<usize> = order[..n_val].to_vec();
    held.sort_unstable();
    let train = (0..ids.len()).filter(|i| !held.contains(i)).map(|i| ids[i].clone()).collect();
    (train, held.into_iter().map(|i| ids[i].clone()).collect())
}

/// Writes `n_cases` case directories and `manifest.json` under `out`.
pub fn generate_dataset(spec: &SyntheticSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let entries: Vec<Result<ManifestEntry>> = (0..spec.n_cases)
        .into_par_iter()
        .map(|i| {
            let c = generate_case_detailed(spec, i)?;
            save_case(&out.join(&c.case.case_id), &c.case)?;
            let lesion_voxels = c.case.gt.as_ref().map_or(0, |g| g.count_nonzero());
            Ok(ManifestEntry { case_id: c.case.case_id, success: c.success, lesion_voxels })
        })
        .collect();
    let cases = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = cases.iter().map(|e| e.case_id.clone()).collect();
    let (train, validation) = split_ids(&ids, spec.validation_fraction, spec.seed ^ 0x5917);
    let manifest = Manifest { spec: spec.clone(), cases, train, validation };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::load_case;

    fn small() -> SyntheticSpec {
        SyntheticSpec { n_cases: 6, ..Default::default() }
    }

    #[test]
    fn gt_is_core_or_penumbra() {
        let spec = small();
        let mut seen = [false; 2];
        for i in 0..12 {
            let c = generate_case_detailed(&spec, i).unwrap();
            let gt: Vec<bool> = c.case.gt.as_ref().unwrap().data().iter().map(|&v| v != 0.0).collect();
            assert_eq!(gt, if c.success { c.core.clone() } else { c.penumbra.clone() });
            assert!(c.core.iter().zip(&c.penumbra).all(|(&a, &b)| !a || b));
            let nc = c.core.iter().filter(|&&v| v).count();
            let np = c.penumbra.iter().filter(|&&v| v).count();
            assert!(np > nc && nc >= spec.min_core_voxels);
            seen[c.success as usize] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn deficit_predictor_is_imperfect_on_success() {
        let spec = small();
        for i in 0..12 {
            let c = generate_case_detailed(&spec, i).unwrap();
            if c.success {
                let tmax = c.case.map(MapKind::Tmax).unwrap();
                let pred: Vec<bool> = tmax.data().iter().map(|&v| v > 6.0).collect();
                let tp = pred.iter().zip(&c.core).filter(|(&p, &g)| p && g).count();
                let dice = 2.0 * tp as f64 / (pred.iter().filter(|&&p| p).count() + c.core.iter().filter(|&&g| g).count()) as f64;
                assert!(dice < 0.8, "dice {dice}");
            }
        }
    }

    #[test]
    fn offset_alternates_only_on_success() {
        let spec = SyntheticSpec { noise_sigma: 0.0, ..small() };
        let mut checked = 0;
        for i in 0..8 {
            let c = generate_case_detailed(&spec, i).unwrap();
            let r = c.case.map(MapKind::Rcbf).unwrap();
            assert_eq!(r.min_max().1, VESSEL_GAIN * 50.0);
            assert_eq!(c.case.map(MapKind::Rcbv).unwrap().min_max().1, VESSEL_GAIN * 4.0);
            let nz = r.dims()[2];
            let v: Vec<f32> = (0..nz).map(|z| r.get(32, 20, z)).collect();
            let healthy = (0..nz).all(|z| !c.penumbra[r.index(32, 20, z)]) && !v.contains(&(VESSEL_GAIN * 50.0));
            if healthy {
                checked += 1;
                let flips = v.windows(2).filter(|w| w[0] != w[1]).count();
                assert_eq!(flips, if c.success { nz - 1 } else { 0 });
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn determinism_and_schema() {
        let spec = small();
        let a = generate_case(&spec, 3).unwrap();
        let b = generate_case(&spec, 3).unwrap();
        assert_eq!(a.maps, b.maps);
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.maps.len(), 6);
        assert_ne!(generate_case(&spec, 4).unwrap().maps, a.maps);
    }

    #[test]
    fn infeasible_geometry_is_reported() {
        let spec = SyntheticSpec { min_core_voxels: 1_000_000, ..small() };
        assert!(matches!(generate_case(&spec, 0), Err(Error::Config(_))));
        let spec = SyntheticSpec { radius_range: (40.0, 50.0), ..small() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dataset_directory_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { n_cases: 5, ..Default::default() };
        let m = generate_dataset(&spec, dir.path()).unwrap();
        assert_eq!(m.cases.len(), 5);
        assert_eq!((m.train.len(), m.validation.len()), (4, 1));
        assert!(m.cases.iter().all(|e| e.lesion_voxels > 0));
        let loaded = load_case(&dir.path().join(&m.cases[2].case_id)).unwrap();
        assert_eq!(loaded.maps, generate_case(&spec, 2).unwrap().maps);
        let again: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn split_of_fifty() {
        let ids: Vec<String> = (0..50).map(case_id).collect();
        let (t, v) = split_ids(&ids, 0.2, 1);
        assert_eq!((t.len(), v.len()), (40, 10));
        assert!(v.iter().all(|id| !t.contains(id)));
    }
}
