//! 26-connected component labelling and removal of components under 250 voxels.

use strokepred::pipeline::{connected_components_26, postprocess_mask, MIN_COMPONENT_VOXELS};
use strokepred::volume::{MapKind, Volume};

fn main() -> strokepred::Result<()> {
    let dims = [40, 40, 10];
    let mut d = vec![0.0f32; dims.iter().product()];
    let mut put = |x: usize, y: usize, z: usize| d[x + dims[0] * (y + dims[1] * z)] = 1.0;
    // 10x10x5 block (500 voxels), 7x7x5 block (245 voxels) and a diagonal chain touching only at corners.
    for z in 0..5 {
        for y in 0..10 {
            for x in 0..10 {
                put(x, y, z);
            }
        }
        for y in 20..27 {
            for x in 20..27 {
                put(x, y, z);
            }
        }
    }
    for i in 0..10 {
        put(30 + i % 10, 5 + i, i);
    }
    let mask = Volume::new(dims, [1.0; 3], MapKind::Mask, d)?;
    let (_, sizes) = connected_components_26(&mask);
    println!("components: {sizes:?}");
    let kept = postprocess_mask(&mask, MIN_COMPONENT_VOXELS)?;
    println!("voxels {} -> {} after removing components under {MIN_COMPONENT_VOXELS}", mask.count_nonzero(), kept.count_nonzero());
    Ok(())
}
