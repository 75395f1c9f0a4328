use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dims, MapKind, PreprocessedCase, Volume};
use crate::error::{shape_err, Error, Result};

/// A channel-major block cut out of co-registered volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: [usize; 3],
    pub shape: Dims,
    pub channels: Vec<MapKind>,
    /// `data[c * px*py*pz + x + px * (y + py * z)]`
    pub data: Vec<f32>,
}

impl Patch {
    pub fn voxels_per_channel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels_per_channel();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Offset of the first patch voxel relative to the centre.
#[inline]
pub(crate) fn half_extent(len: usize) -> isize {
    (len / 2) as isize
}

/// Cuts a `shape` block centred on `center` from every map; out-of-grid voxels are zero.
pub fn extract_patch(maps: &[&Volume], center: [usize; 3], shape: Dims) -> Result<Patch> {
    let Some(first) = maps.first() else {
        return shape_err("extract_patch needs at least one map");
    };
    let dims = first.dims();
    if maps.iter().any(|m| m.dims() != dims) {
        return shape_err("extract_patch: maps disagree on dims");
    }
    if (0..3).any(|a| center[a] >= dims[a]) {
        return shape_err(format!("patch centre {center:?} outside volume {dims:?}"));
    }
    if shape.iter().any(|&s| s == 0) {
        return shape_err("patch shape must be positive");
    }
    let per = shape[0] * shape[1] * shape[2];
    let mut data = Vec::with_capacity(per * maps.len());
    let origin = [
        center[0] as isize - half_extent(shape[0]),
        center[1] as isize - half_extent(shape[1]),
        center[2] as isize - half_extent(shape[2]),
    ];
    for m in maps {
        for dz in 0..shape[2] as isize {
            for dy in 0..shape[1] as isize {
                for dx in 0..shape[0] as isize {
                    data.push(m.get_padded(origin[0] + dx, origin[1] + dy, origin[2] + dz));
                }
            }
        }
    }
    Ok(Patch { center, shape, channels: maps.iter().map(|m| m.kind()).collect(), data })
}

/// A multi-channel 2D grid, channel-major then row-major (`y` rows, `x` columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Patch2d {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Patch2d {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return shape_err("Patch2d data length mismatch");
        }
        Ok(Patch2d { channels, height, width, data })
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Rotates every channel by `k` quarter turns; `[[1,2],[3,4]]` becomes `[[3,1],[4,2]]` for `k = 1`.
///
/// Rows run along +y, so with y pointing up this is a counter-clockwise turn.
pub fn rotate90(patch: &Patch2d, k: u8) -> Result<Patch2d> {
    if patch.height != patch.width {
        return shape_err(format!("rotate90 needs a square patch, got {}x{}", patch.height, patch.width));
    }
    let n = patch.height;
    let mut cur = patch.clone();
    for _ in 0..(k % 4) {
        let mut next = vec![0.0f32; cur.data.len()];
        for c in 0..cur.channels {
            let base = c * n * n;
            for r in 0..n {
                for col in 0..n {
                    next[base + r * n + col] = cur.data[base + (n - 1 - col) * n + r];
                }
            }
        }
        cur.data = next;
    }
    Ok(cur)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Share of centres drawn from lesion voxels; the rest come from brain voxels.
    pub lesion_fraction: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { lesion_fraction: 0.5 }
    }
}

/// Draws `n` patch centres: a lesion share uniformly from gt voxels, the rest uniformly from brain voxels.
pub fn sample_training_patches(
    case: &PreprocessedCase,
    n: usize,
    seed: u64,
    cfg: SamplingConfig,
) -> Result<Vec<[usize; 3]>> {
    let gt = case
        .gt
        .as_ref()
        .ok_or_else(|| Error::Data(format!("case {}: training patches need a ground truth", case.case_id)))?;
    let brain: Vec<usize> = case
        .brain_mask()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    if brain.is_empty() {
        return Err(Error::Data(format!("case {}: no nonzero voxels", case.case_id)));
    }
    let lesion: Vec<usize> = gt
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| (v != 0.0).then_some(i))
        .collect();
    let n_lesion = if lesion.is_empty() { 0 } else { (n as f64 * cfg.lesion_fraction).round() as usize };
    let n_lesion = n_lesion.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(n);
    for i in 0..n {
        let pool = if i < n_lesion { &lesion } else { &brain };
        let idx = pool[rng.random_range(0..pool.len())];
        centers.push(gt.coords(idx));
    }
    Ok(centers)
}
