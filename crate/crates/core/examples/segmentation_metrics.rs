//! Overlap and surface-distance metrics on two offset spheres with anisotropic voxels.

use strokepred::metrics::{evaluate_case, format_summary, metrics_csv, summarize};
use strokepred::volume::{MapKind, Volume};

fn sphere(dims: [usize; 3], spacing: [f64; 3], c: [f64; 3], r: f64) -> Volume {
    let mut d = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]];
                let r2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
                d.push((r2 <= r * r) as u8 as f32);
            }
        }
    }
    Volume::new(dims, spacing, MapKind::Mask, d).expect("valid mask")
}

fn main() -> strokepred::Result<()> {
    let (dims, spacing) = ([48, 48, 16], [1.0, 1.0, 3.0]);
    let gt = sphere(dims, spacing, [24.0, 24.0, 24.0], 12.0);
    let mut reports = Vec::new();
    for (k, shift) in [0.0, 2.0, 5.0, 9.0].iter().enumerate() {
        let pred = sphere(dims, spacing, [24.0 + shift, 24.0, 24.0], 11.0);
        reports.push(evaluate_case(&format!("shift_{k}"), &pred, &gt)?);
    }
    print!("{}", metrics_csv(&reports));
    print!("{}", format_summary(&summarize(&reports)));
    Ok(())
}
