//! Volumetric data model and the preprocessing chain applied to every case.

pub(crate) mod io;
mod patch;

pub use io::{load_case, read_raw_f32, read_raw_u8, save_case, write_raw_f32, write_raw_u8, CaseMeta};
pub use patch::{extract_patch, rotate90, sample_training_patches, Patch, Patch2d, SamplingConfig};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

/// Common grid every case is resized to before any learning happens.
pub const COMMON_DIMS: Dims = [256, 256, 32];
/// ADC clip range in units of 10⁻⁶ mm²/s.
pub const ADC_CLIP: (f32, f32) = (0.0, 2600.0);
/// Tmax clip range in seconds.
pub const TMAX_CLIP: (f32, f32) = (0.0, 20.0);
/// Intensity range of every preprocessed map.
pub const RESCALE_RANGE: (f32, f32) = (0.0, 255.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapKind {
    Adc,
    Mtt,
    Ttp,
    Tmax,
    Rcbv,
    Rcbf,
    Mask,
    Feature,
}

impl MapKind {
    /// The six parametric maps, in canonical channel order.
    pub const PARAMETRIC: [MapKind; 6] =
        [MapKind::Adc, MapKind::Mtt, MapKind::Ttp, MapKind::Tmax, MapKind::Rcbv, MapKind::Rcbf];

    /// File stem used by the case directory format.
    pub fn file_stem(self) -> &'static str {
        match self {
            MapKind::Adc => "ADC",
            MapKind::Mtt => "MTT",
            MapKind::Ttp => "TTP",
            MapKind::Tmax => "TMAX",
            MapKind::Rcbv => "RCBV",
            MapKind::Rcbf => "RCBF",
            MapKind::Mask => "GT",
            MapKind::Feature => "FEAT",
        }
    }

    pub fn from_name(s: &str) -> Option<MapKind> {
        let k = match s.to_ascii_uppercase().as_str() {
            "ADC" => MapKind::Adc,
            "MTT" => MapKind::Mtt,
            "TTP" => MapKind::Ttp,
            "TMAX" => MapKind::Tmax,
            "RCBV" => MapKind::Rcbv,
            "RCBF" => MapKind::Rcbf,
            "GT" | "MASK" => MapKind::Mask,
            "FEAT" | "FEATURE" => MapKind::Feature,
            _ => return None,
        };
        Some(k)
    }

    pub fn parametric_index(self) -> Option<usize> {
        MapKind::PARAMETRIC.iter().position(|&k| k == self)
    }
}

/// A dense 3D scalar grid, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    kind: MapKind,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, kind: MapKind, data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return shape_err(format!("dims must be positive, got {dims:?}"));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return shape_err(format!("spacing must be positive, got {spacing:?}"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return shape_err(format!("data length {} does not match dims {dims:?}", data.len()));
        }
        if kind == MapKind::Mask && data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("mask volume contains values outside {0,1}".into()));
        }
        Ok(Volume { dims, spacing, kind, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, kind: MapKind, value: f32) -> Result<Self> {
        let n = dims.iter().product();
        Volume::new(dims, spacing, kind, vec![value; n])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Zero outside the grid.
    #[inline]
    pub fn get_padded(&self, x: isize, y: isize, z: isize) -> f32 {
        let [dx, dy, dz] = self.dims;
        if x < 0 || y < 0 || z < 0 || x as usize >= dx || y as usize >= dy || z as usize >= dz {
            0.0
        } else {
            self.data[self.index(x as usize, y as usize, z as usize)]
        }
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn with_kind(mut self, kind: MapKind) -> Result<Self> {
        if kind == MapKind::Mask && self.data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("cannot relabel non-binary volume as mask".into()));
        }
        self.kind = kind;
        Ok(self)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// The single axial slice `z` as a row-major `y x` grid.
    pub fn slice_z(&self, z: usize) -> &[f32] {
        let plane = self.dims[0] * self.dims[1];
        &self.data[z * plane..(z + 1) * plane]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Source coordinate of destination index `i` under pixel-centre alignment.
#[inline]
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    let c = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    c.clamp(0.0, (src - 1) as f64)
}

#[inline]
fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    (((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
}

/// Resamples `vol` onto a `target` grid covering the same physical extent.
pub fn resize_volume(vol: &Volume, target: Dims, mode: Interpolation) -> Result<Volume> {
    if target.iter().any(|&d| d == 0) {
        return shape_err(format!("resize target must be positive, got {target:?}"));
    }
    let src = vol.dims;
    let spacing = [
        vol.spacing[0] * src[0] as f64 / target[0] as f64,
        vol.spacing[1] * src[1] as f64 / target[1] as f64,
        vol.spacing[2] * src[2] as f64 / target[2] as f64,
    ];
    if src == target {
        return Volume::new(target, spacing, vol.kind, vol.data.clone());
    }
    let mut out = Vec::with_capacity(target.iter().product());
    match mode {
        Interpolation::Nearest => {
            let ix: Vec<usize> = (0..target[0]).map(|i| nearest_index(i, src[0], target[0])).collect();
            let iy: Vec<usize> = (0..target[1]).map(|i| nearest_index(i, src[1], target[1])).collect();
            let iz: Vec<usize> = (0..target[2]).map(|i| nearest_index(i, src[2], target[2])).collect();
            for &z in &iz {
                for &y in &iy {
                    for &x in &ix {
                        out.push(vol.get(x, y, z));
                    }
                }
            }
        }
        Interpolation::Trilinear => {
            let axis = |d: usize| -> Vec<(usize, usize, f64)> {
                (0..target[d])
                    .map(|i| {
                        let c = source_coord(i, src[d], target[d]);
                        let lo = c.floor() as usize;
                        let hi = (lo + 1).min(src[d] - 1);
                        (lo, hi, c - lo as f64)
                    })
                    .collect()
            };
            let (ax, ay, az) = (axis(0), axis(1), axis(2));
            for &(z0, z1, tz) in &az {
                for &(y0, y1, ty) in &ay {
                    for &(x0, x1, tx) in &ax {
                        let g = |x, y, z| vol.get(x, y, z) as f64;
                        let c00 = g(x0, y0, z0) * (1.0 - tx) + g(x1, y0, z0) * tx;
                        let c10 = g(x0, y1, z0) * (1.0 - tx) + g(x1, y1, z0) * tx;
                        let c01 = g(x0, y0, z1) * (1.0 - tx) + g(x1, y0, z1) * tx;
                        let c11 = g(x0, y1, z1) * (1.0 - tx) + g(x1, y1, z1) * tx;
                        let c0 = c00 * (1.0 - ty) + c10 * ty;
                        let c1 = c01 * (1.0 - ty) + c11 * ty;
                        out.push((c0 * (1.0 - tz) + c1 * tz) as f32);
                    }
                }
            }
        }
    }
    Volume::new(target, spacing, vol.kind, out)
}

/// Clamps ADC and Tmax to their physiologically meaningful ranges; other kinds pass through.
pub fn clip_map(vol: &Volume) -> Volume {
    let range = match vol.kind {
        MapKind::Adc => Some(ADC_CLIP),
        MapKind::Tmax => Some(TMAX_CLIP),
        _ => None,
    };
    let mut out = vol.clone();
    if let Some((lo, hi)) = range {
        out.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
    out
}

/// Affine min-max map onto `[lo, hi]`. A constant volume maps entirely to `lo`.
pub fn rescale_linear(vol: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if !(hi > lo) {
        return Err(Error::Config(format!("rescale needs hi > lo, got [{lo}, {hi}]")));
    }
    let (min, max) = vol.min_max();
    let mut out = vol.clone();
    if max > min {
        let scale = (hi - lo) as f64 / (max - min) as f64;
        out.data.iter_mut().for_each(|v| {
            let t = lo as f64 + (*v - min) as f64 * scale;
            *v = (t as f32).clamp(lo, hi);
        });
    } else {
        out.data.iter_mut().for_each(|v| *v = lo);
    }
    Ok(out)
}

/// One subject: six co-registered parametric maps and an optional lesion mask.
#[derive(Debug, Clone)]
pub struct PatientCase {
    pub case_id: String,
    /// Indexed by `MapKind::PARAMETRIC` order.
    pub maps: Vec<Volume>,
    pub gt: Option<Volume>,
    pub original_dims: Dims,
    pub original_spacing: Spacing,
}

impl PatientCase {
    /// Validates the six-map schema and shared geometry.
    pub fn new(case_id: impl Into<String>, maps: Vec<Volume>, gt: Option<Volume>) -> Result<Self> {
        let case_id = case_id.into();
        if maps.len() != 6 {
            return Err(Error::Data(format!("case {case_id}: expected 6 maps, got {}", maps.len())));
        }
        for (slot, kind) in MapKind::PARAMETRIC.iter().enumerate() {
            if maps[slot].kind != *kind {
                return Err(Error::Data(format!(
                    "case {case_id}: slot {slot} holds {:?}, expected {kind:?}",
                    maps[slot].kind
                )));
            }
        }
        let dims = maps[0].dims;
        let spacing = maps[0].spacing;
        for m in &maps {
            if m.dims != dims || m.spacing != spacing {
                return Err(Error::Shape(format!("case {case_id}: maps disagree on geometry")));
            }
        }
        if let Some(g) = &gt {
            if g.dims != dims {
                return Err(Error::Shape(format!("case {case_id}: gt dims differ from maps")));
            }
            if g.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Data(format!("case {case_id}: gt is not binary")));
            }
        }
        Ok(PatientCase { case_id, maps, gt, original_dims: dims, original_spacing: spacing })
    }

    /// Builds a case from maps in any order; fails if a parametric kind is missing.
    pub fn from_unordered(case_id: impl Into<String>, mut maps: Vec<Volume>, gt: Option<Volume>) -> Result<Self> {
        let case_id = case_id.into();
        let mut ordered = Vec::with_capacity(6);
        for kind in MapKind::PARAMETRIC {
            let pos = maps
                .iter()
                .position(|m| m.kind == kind)
                .ok_or_else(|| Error::Data(format!("case {case_id}: missing {kind:?} map")))?;
            ordered.push(maps.swap_remove(pos));
        }
        PatientCase::new(case_id, ordered, gt)
    }

    pub fn map(&self, kind: MapKind) -> Option<&Volume> {
        kind.parametric_index().and_then(|i| self.maps.get(i)).filter(|v| v.kind == kind)
    }

    pub fn dims(&self) -> Dims {
        self.maps[0].dims
    }

    pub fn spacing(&self) -> Spacing {
        self.maps[0].spacing
    }
}

/// Geometry recorded before resizing so predictions can be mapped back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub original_dims: Dims,
    pub original_spacing: Spacing,
}

#[derive(Debug, Clone)]
pub struct PreprocessedCase {
    pub case_id: String,
    pub maps: Vec<Volume>,
    pub gt: Option<Volume>,
    pub provenance: Provenance,
}

impl PreprocessedCase {
    pub fn map(&self, kind: MapKind) -> Option<&Volume> {
        kind.parametric_index().and_then(|i| self.maps.get(i)).filter(|v| v.kind == kind)
    }

    pub fn dims(&self) -> Dims {
        self.maps[0].dims
    }

    pub fn spacing(&self) -> Spacing {
        self.maps[0].spacing
    }

    /// Voxels where any preprocessed map is nonzero.
    pub fn brain_mask(&self) -> Vec<bool> {
        let n = self.maps[0].len();
        (0..n).map(|i| self.maps.iter().any(|m| m.data[i] != 0.0)).collect()
    }
}

/// Resize (trilinear maps, nearest mask), clip, then rescale each map to `[0, 255]`.
pub fn preprocess_case(case: &PatientCase) -> Result<PreprocessedCase> {
    preprocess_case_to(case, COMMON_DIMS)
}

/// [`preprocess_case`] with an explicit common grid.
pub fn preprocess_case_to(case: &PatientCase, target: Dims) -> Result<PreprocessedCase> {
    let mut maps = Vec::with_capacity(6);
    for kind in MapKind::PARAMETRIC {
        let vol = case
            .map(kind)
            .filter(|v| v.kind == kind)
            .ok_or_else(|| Error::Data(format!("case {}: missing {kind:?} map", case.case_id)))?;
        let resized = resize_volume(vol, target, Interpolation::Trilinear)?;
        let clipped = clip_map(&resized);
        maps.push(rescale_linear(&clipped, RESCALE_RANGE.0, RESCALE_RANGE.1)?);
    }
    let gt = case
        .gt
        .as_ref()
        .map(|g| resize_volume(g, target, Interpolation::Nearest))
        .transpose()?;
    Ok(PreprocessedCase {
        case_id: case.case_id.clone(),
        maps,
        gt,
        provenance: Provenance { original_dims: case.original_dims, original_spacing: case.original_spacing },
    })
}
