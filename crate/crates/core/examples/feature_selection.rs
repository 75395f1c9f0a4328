//! Scores candidate features by NMI and random-forest MDI and keeps the best by fused rank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokepred::selection::{fuse_and_select, mdi_importances, nmi_sum_of, train_random_forest, ForestConfig};

fn main() -> strokepred::Result<()> {
    let (n, d) = (3000, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let source: Vec<f32> = (0..n).map(|_| rng.random()).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for &s in &source {
        for f in 0..d {
            // Feature 2 copies the source map, feature 7 decides the label, the rest are noise.
            x.push(if f == 2 { s + 0.01 * rng.random::<f32>() } else { rng.random() });
        }
        y.push(x[x.len() - d + 7] > 0.6);
    }
    let column = |f: usize| -> Vec<f32> { (0..n).map(|i| x[i * d + f]).collect() };
    let nmi = (0..d).map(|f| nmi_sum_of(&column(f), &source, 64)).collect::<strokepred::Result<Vec<_>>>()?;
    let rf = train_random_forest(&x, &y, d, &ForestConfig { n_trees: 50, ..Default::default() })?;
    let mdi = mdi_importances(&rf);
    for f in 0..d {
        println!("feature {f}: nmi {:.3} mdi {:.3}", nmi[f], mdi[f]);
    }
    let r = fuse_and_select("demo", &nmi, &mdi, 3)?;
    println!("selected {:?}", r.selected);
    Ok(())
}
