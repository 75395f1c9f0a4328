use crate::error::Result;
use crate::volume::{MapKind, Volume};

pub const MIN_COMPONENT_VOXELS: usize = 250;

/// Component label per voxel (0 = background, labels from 1) and the size of each component.
pub fn connected_components_26(mask: &Volume) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = mask.dims();
    let data = mask.data();
    let mut labels = vec![0u32; data.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..data.len() {
        if data[start] == 0.0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
            for dz in -1isize..=1 {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (a, b, c) = (x as isize + dx, y as isize + dy, z as isize + dz);
                        if a < 0 || b < 0 || c < 0 || a >= nx as isize || b >= ny as isize || c >= nz as isize {
                            continue;
                        }
                        let j = a as usize + nx * (b as usize + ny * c as usize);
                        if data[j] != 0.0 && labels[j] == 0 {
                            labels[j] = label;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Removes 26-connected components with fewer than `min_size` voxels.
pub fn postprocess_mask(mask: &Volume, min_size: usize) -> Result<Volume> {
    let (labels, sizes) = connected_components_26(mask);
    let data = labels.iter().map(|&l| (l != 0 && sizes[l as usize - 1] >= min_size) as u8 as f32).collect();
    Volume::new(mask.dims(), mask.spacing(), MapKind::Mask, data)
}
