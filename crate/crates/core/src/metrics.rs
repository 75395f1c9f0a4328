//! Overlap and surface-distance metrics on binary 3D masks with anisotropic spacing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::volume::io::write_atomic;
use crate::volume::{Spacing, Volume};

fn check_dims(pred: &Volume, gt: &Volume) -> Result<()> {
    if pred.dims() != gt.dims() {
        return shape_err(format!("mask dims differ: {:?} vs {:?}", pred.dims(), gt.dims()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion(pred: &Volume, gt: &Volume) -> Result<Confusion> {
    check_dims(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p != 0.0, g != 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(c)
}

/// `2|P∩G| / (|P|+|G|)`, 1 when both masks are empty.
pub fn dice(pred: &Volume, gt: &Volume) -> Result<f64> {
    let c = confusion(pred, gt)?;
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(if den == 0 { 1.0 } else { 2.0 * c.tp as f64 / den as f64 })
}

/// A ratio whose denominator may be empty; `undefined` marks the reported 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

fn ratio(num: usize, den: usize) -> Ratio {
    if den == 0 {
        Ratio { value: 0.0, undefined: true }
    } else {
        Ratio { value: num as f64 / den as f64, undefined: false }
    }
}

pub fn precision(pred: &Volume, gt: &Volume) -> Result<Ratio> {
    let c = confusion(pred, gt)?;
    Ok(ratio(c.tp, c.tp + c.fp))
}

pub fn recall(pred: &Volume, gt: &Volume) -> Result<Ratio> {
    let c = confusion(pred, gt)?;
    Ok(ratio(c.tp, c.tp + c.fn_))
}

/// Foreground voxels with a 6-neighbour that is background or outside the grid, in mm.
pub fn surface_voxels(mask: &Volume, spacing: Spacing) -> Vec<[f64; 3]> {
    let [nx, ny, nz] = mask.dims();
    let on = |x: isize, y: isize, z: isize| mask.get_padded(x, y, z) != 0.0;
    let mut pts = Vec::new();
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                if !on(x, y, z) {
                    continue;
                }
                let interior = on(x - 1, y, z)
                    && on(x + 1, y, z)
                    && on(x, y - 1, z)
                    && on(x, y + 1, z)
                    && on(x, y, z - 1)
                    && on(x, y, z + 1);
                if !interior {
                    pts.push([x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]]);
                }
            }
        }
    }
    pts
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Exact nearest-neighbour queries over a fixed point set, bucketed in cubic cells.
pub struct PointGrid<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [[f64; 3]], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = Self::key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            buckets.entry(k).or_default().push(i);
        }
        PointGrid { points, cell, buckets, lo, hi }
    }

    fn key(p: &[f64; 3], cell: f64) -> [i64; 3] {
        [(p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64]
    }

    /// Distance to the closest stored point; `None` for an empty set.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let k = Self::key(q, self.cell);
        let reach = (0..3).map(|a| (k[a] - self.lo[a]).abs().max((self.hi[a] - k[a]).abs())).max().unwrap_or(0);
        let mut best = f64::INFINITY;
        for r in 0..=reach {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(ids) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &i in ids {
                                best = best.min(dist(q, &self.points[i]));
                            }
                        }
                    }
                }
            }
            // Cells outside ring r are at least r cell widths away along some axis.
            if best <= r as f64 * self.cell {
                break;
            }
        }
        Some(best)
    }
}

/// Distance from every point of `a` to its nearest point in `b`.
pub fn directed_distances(a: &[[f64; 3]], b: &[[f64; 3]], spacing: Spacing) -> Vec<f64> {
    let cell = spacing.iter().cloned().fold(1e-9, f64::max) * 2.0;
    let grid = PointGrid::new(b, cell);
    a.iter().filter_map(|p| grid.nearest(p)).collect()
}

/// All-pairs reference for [`directed_distances`].
pub fn directed_distances_brute(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<f64> {
    a.iter().map(|p| b.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).collect()
}

fn surfaces(pred: &Volume, gt: &Volume, spacing: Spacing) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    check_dims(pred, gt)?;
    let a = surface_voxels(pred, spacing);
    let b = surface_voxels(gt, spacing);
    if a.is_empty() || b.is_empty() {
        return Err(Error::Undefined("surface distance with an empty mask".into()));
    }
    Ok((a, b))
}

pub fn hausdorff_mm(pred: &Volume, gt: &Volume, spacing: Spacing) -> Result<f64> {
    let (a, b) = surfaces(pred, gt, spacing)?;
    let ab = directed_distances(&a, &b, spacing);
    let ba = directed_distances(&b, &a, spacing);
    Ok(ab.into_iter().chain(ba).fold(0.0, f64::max))
}

pub fn assd_mm(pred: &Volume, gt: &Volume, spacing: Spacing) -> Result<f64> {
    let (a, b) = surfaces(pred, gt, spacing)?;
    let ab = directed_distances(&a, &b, spacing);
    let ba = directed_distances(&b, &a, spacing);
    let n = ab.len() + ba.len();
    Ok(ab.into_iter().chain(ba).sum::<f64>() / n as f64)
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case_id: String,
    pub dice: f64,
    pub hd_mm: Option<f64>,
    pub assd_mm: Option<f64>,
    pub precision: Ratio,
    pub recall: Ratio,
}

pub fn evaluate_case(case_id: &str, pred: &Volume, gt: &Volume) -> Result<MetricsReport> {
    let spacing = gt.spacing();
    Ok(MetricsReport {
        case_id: case_id.to_string(),
        dice: dice(pred, gt)?,
        hd_mm: defined(hausdorff_mm(pred, gt, spacing))?,
        assd_mm: defined(assd_mm(pred, gt, spacing))?,
        precision: precision(pred, gt)?,
        recall: recall(pred, gt)?,
    })
}

/// Mean and sample standard deviation over the cases where a metric is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: f64::NAN, std: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    MeanStd { mean, std: var.sqrt(), n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub dice: MeanStd,
    pub hd_mm: MeanStd,
    pub assd_mm: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
}

pub fn summarize(reports: &[MetricsReport]) -> MetricsSummary {
    let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| mean_std(&reports.iter().filter_map(f).collect::<Vec<_>>());
    MetricsSummary {
        dice: col(&|r| Some(r.dice)),
        hd_mm: col(&|r| r.hd_mm),
        assd_mm: col(&|r| r.assd_mm),
        precision: col(&|r| Some(r.precision.value)),
        recall: col(&|r| Some(r.recall.value)),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |v| format!("{v:.6}"))
}

/// One row per case, then `mean` and `std` rows; undefined distances are `NA`.
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("case_id,dice,hd_mm,assd_mm,precision,recall\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{:.6},{},{},{:.6},{:.6}",
            r.case_id,
            r.dice,
            cell(r.hd_mm),
            cell(r.assd_mm),
            r.precision.value,
            r.recall.value
        );
    }
    let m = summarize(reports);
    let all = [m.dice, m.hd_mm, m.assd_mm, m.precision, m.recall];
    for (name, pick) in [("mean", 0), ("std", 1)] {
        s.push_str(name);
        for x in all {
            let v = if pick == 0 { x.mean } else { x.std };
            s.push(',');
            s.push_str(&cell(v.is_finite().then_some(v)));
        }
        s.push('\n');
    }
    s
}

pub fn write_metrics_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    write_atomic(path, metrics_csv(reports).as_bytes())
}

/// `mean ± std` line per metric.
pub fn format_summary(m: &MetricsSummary) -> String {
    let line = |name: &str, x: MeanStd| format!("{name}: {:.4} ± {:.4} (n={})\n", x.mean, x.std, x.n);
    [
        line("dice", m.dice),
        line("hd_mm", m.hd_mm),
        line("assd_mm", m.assd_mm),
        line("precision", m.precision),
        line("recall", m.recall),
    ]
    .concat()
}
