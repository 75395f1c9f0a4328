//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use strokepred::metrics::{
    assd_mm, dice, directed_distances, directed_distances_brute, hausdorff_mm, precision, recall, surface_voxels,
};
use strokepred::nn::gradcheck::{numeric_gradient, rand_tensor, relative_error, FD_TOLERANCE, KINK_MARGIN};
use strokepred::nn::{
    batch_soft_dice, bilstm_axis, conv2d, lstm_cell_step, maxpool2, maxpool2_backward, partition2d, soft_dice_loss,
    split_counts, unpartition2d, upsample2, Axis, CheckpointHeader, ChannelNorm, LstmWeights, Network, NetworkSpec,
    Parameters, PredictorCheckpoint, Tensor, TrainConfig, NET_FORMAT_VERSION,
};
use strokepred::pipeline::{
    channel_names, inner_split, postprocess_mask, predict_case, Grouping, PipelineConfig, PredictionArtifacts,
    MIN_COMPONENT_VOXELS,
};
use strokepred::rbm::{train_rbm, Rbm, RbmGroupSpec, RbmTrainConfig, PATCH_3D};
use strokepred::selection::{
    fuse_and_select, mdi_importances, nmi_sum, nmi_sum_of, train_random_forest, ForestConfig, SelectionResult,
};
use strokepred::synth::{generate_case, SyntheticSpec};
use strokepred::volume::{MapKind, Volume};

static SERIAL: std::sync::Mutex<()> = std::sync::Mutex::new(());

/// Keeps the timed criteria from sharing the CPU with each other.
fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {n} [{name}]: {verdict} ({detail})");
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_fidelity() {
    let _serial = serial();
    let start = Instant::now();
    let spec = NetworkSpec {
        in_channels: 2,
        widths: vec![4, 8, 16],
        blocks: vec![4, 2, 2],
        recurrent_hidden: vec![4, 2],
        recurrent: true,
    };
    let (net, mut p) = Network::build::<f64>(&spec, 101).unwrap();
    for e in p.entries.clone() {
        if e.name.ends_with(".wx") {
            for v in &mut p.data[e.range()] {
                *v *= 30.0;
            }
        }
    }
    let x = rand_tensor(2, 2, 12, 12, 102);
    if let Err(e) = net.smooth_point(&mut p, &x, KINK_MARGIN, 103) {
        report(1, "gradient fidelity", false, &format!("{e}"));
        panic!("{e}");
    }
    let g: Vec<f64> = (0..2 * 144).map(|i| ((i * 7919) % 5 == 0) as u8 as f64).collect();
    let (y, cache) = net.forward_cached(&p, &x).unwrap();
    let loss = batch_soft_dice(&y.data, &g, 2).unwrap();
    let dout = Tensor { data: loss.grad, ..y };
    let analytic = net.backward(&p, cache, &dout).unwrap();
    let numeric = numeric_gradient(&p.data, |v| {
        let q = Parameters { entries: p.entries.clone(), data: v.to_vec() };
        batch_soft_dice(&net.forward(&q, &x).unwrap().data, &g, 2).unwrap().loss
    });

    let mut groups: BTreeMap<String, f64> = BTreeMap::new();
    for e in &p.entries {
        let kind = if e.name.contains(".fwd.") || e.name.contains(".bwd.") {
            format!("lstm.{}", e.name.rsplit('.').next().unwrap())
        } else {
            format!("conv.{}", e.name.rsplit('.').next().unwrap())
        };
        let err = e.range().map(|i| relative_error(analytic[i], numeric[i])).fold(0.0, f64::max);
        let slot = groups.entry(kind).or_insert(0.0);
        *slot = slot.max(err);
    }
    // Every LSTM gate block is checked separately: rows are stacked i, f, g, o.
    for e in p.entries.iter().filter(|e| e.name.contains(".fwd.") || e.name.contains(".bwd.")) {
        let r = e.range();
        let rows = if e.name.ends_with(".b") { r.len() } else { e.shape[0] };
        let per_row = r.len() / rows;
        let s = rows / 4;
        for (gi, gate) in ["i", "f", "g", "o"].iter().enumerate() {
            let lo = r.start + gi * s * per_row;
            let hi = lo + s * per_row;
            let err = (lo..hi).map(|i| relative_error(analytic[i], numeric[i])).fold(0.0, f64::max);
            let slot = groups.entry(format!("gate.{gate}")).or_insert(0.0);
            *slot = slot.max(err);
        }
    }
    let worst = groups.values().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst < FD_TOLERANCE && elapsed < Duration::from_secs(120);
    let detail: Vec<String> = groups.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    report(
        1,
        "gradient fidelity",
        pass,
        &format!("max rel err {worst:.2e} < 1e-4, {:.1}s < 120s; {}", elapsed.as_secs_f64(), detail.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

fn t(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(n, c, h, w, data).unwrap()
}

fn sliding_conv_oracle(x: &Tensor<f64>, wgt: &[f64], bias: &[f64], cout: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; x.n * cout * x.h * x.w];
    for n in 0..x.n {
        for o in 0..cout {
            for i in 0..x.h {
                for j in 0..x.w {
                    let mut acc = bias[o];
                    for c in 0..x.c {
                        for di in 0..k {
                            for dj in 0..k {
                                let (yi, xj) = (i as isize + di as isize - r, j as isize + dj as isize - r);
                                if yi >= 0 && xj >= 0 && (yi as usize) < x.h && (xj as usize) < x.w {
                                    acc += wgt[((o * x.c + c) * k + di) * k + dj] * x.at(n, c, yi as usize, xj as usize);
                                }
                            }
                        }
                    }
                    out[((n * cout + o) * x.h + i) * x.w + j] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn criterion_2_layer_oracles() {
    let _serial = serial();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let x = rand_tensor(1, 1, 5, 4, 1);
    check("conv 1x1 identity", conv2d(&x, &[1.0], &[0.0], 1, 1).unwrap().data == x.data);
    let z = Tensor::<f64>::zeros(1, 2, 3, 3);
    let yb = conv2d(&z, &[0.5; 2 * 3 * 9], &[1.5, -2.0, 0.25], 3, 3).unwrap();
    check("conv zero input gives bias", (0..3).all(|o| yb.sample(0)[o * 9..(o + 1) * 9].iter().all(|&v| v == [1.5, -2.0, 0.25][o])));
    let ones = t(1, 1, 3, 3, vec![1.0; 9]);
    let y = conv2d(&ones, &[1.0; 9], &[0.0], 1, 3).unwrap();
    check("conv ones centre 9 corners 4", y.data[4] == 9.0 && [0, 2, 6, 8].iter().all(|&i| y.data[i] == 4.0));
    let xr = t(2, 3, 5, 6, (0..180).map(|i| ((i * 37 % 23) as f64) - 11.0).collect());
    let wr: Vec<f64> = (0..4 * 3 * 9).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
    let br = [1.0, -2.0, 0.0, 3.0];
    check("conv sliding-window oracle", conv2d(&xr, &wr, &br, 4, 3).unwrap().data == sliding_conv_oracle(&xr, &wr, &br, 4, 3));

    let (m, _) = maxpool2(&t(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
    check("maxpool [[1,2],[3,4]] -> 4", m.data == vec![4.0]);
    let c = t(1, 1, 4, 4, vec![7.0; 16]);
    let (mc, arg) = maxpool2(&c).unwrap();
    let back = maxpool2_backward(c.shape(), &arg, &t(1, 1, 2, 2, vec![1.0; 4]));
    let firsts = [0usize, 2, 8, 10];
    check("maxpool constant and first-index routing", mc.data == vec![7.0; 4] && (0..16).all(|i| back.data[i] == firsts.contains(&i) as u8 as f64));
    let u = upsample2(&t(1, 1, 1, 1, vec![3.5]));
    check("upsample value to 2x2 block", u.shape() == [1, 1, 2, 2] && u.data == vec![3.5; 4]);
    check("upsample then pool is identity", maxpool2(&upsample2(&xr)).unwrap().0.data == xr.data);

    let p16 = t(1, 1, 4, 4, (1..=16).map(|v| v as f64).collect());
    let part = partition2d(&p16).unwrap();
    // Channel groups top-left, top-right, bottom-left, bottom-right; each 2x2 output over the block grid.
    let expect = vec![1.0, 3.0, 9.0, 11.0, 2.0, 4.0, 10.0, 12.0, 5.0, 7.0, 13.0, 15.0, 6.0, 8.0, 14.0, 16.0];
    check("partition 1..16 fixed order", part.shape() == [1, 4, 2, 2] && part.data == expect);
    check("partition inverse", unpartition2d(&part).unwrap().data == p16.data);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut wts = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-0.5..0.5)).collect() };
    let (cin, s) = (3, 2);
    let (fx, fh, fb) = (wts(4 * s * cin), wts(4 * s * s), wts(4 * s));
    let (bx, bh, bb) = (wts(4 * s * cin), wts(4 * s * s), wts(4 * s));
    let fwd = LstmWeights { input: cin, hidden: s, wx: &fx, wh: &fh, b: &fb };
    let bwd = LstmWeights { input: cin, hidden: s, wx: &bx, wh: &bh, b: &bb };
    let xl = rand_tensor(1, cin, 4, 1, 6);
    let (yl, _) = bilstm_axis(&xl, Axis::Horizontal, &fwd, &bwd, false).unwrap();
    let mut single = true;
    for r in 0..4 {
        let xin: Vec<f64> = (0..cin).map(|c| xl.at(0, c, r, 0)).collect();
        let (hf, _) = lstm_cell_step(&fwd, &xin, &[0.0; 2], &[0.0; 2]).unwrap();
        let (hb, _) = lstm_cell_step(&bwd, &xin, &[0.0; 2], &[0.0; 2]).unwrap();
        single &= (0..s).all(|j| yl.at(0, j, r, 0) == hf[j] && yl.at(0, s + j, r, 0) == hb[j]);
    }
    check("bilstm width one is a single step", single);
    // Hand-unrolled two-step sequence against the cell oracle.
    let x2 = rand_tensor(1, cin, 1, 2, 7);
    let (y2, _) = bilstm_axis(&x2, Axis::Horizontal, &fwd, &bwd, false).unwrap();
    let col = |j: usize| -> Vec<f64> { (0..cin).map(|c| x2.at(0, c, 0, j)).collect() };
    let (h0, c0) = lstm_cell_step(&fwd, &col(0), &[0.0; 2], &[0.0; 2]).unwrap();
    let (h1, _) = lstm_cell_step(&fwd, &col(1), &h0, &c0).unwrap();
    let (g1, d1) = lstm_cell_step(&bwd, &col(1), &[0.0; 2], &[0.0; 2]).unwrap();
    let (g0, _) = lstm_cell_step(&bwd, &col(0), &g1, &d1).unwrap();
    let ok = (0..s).all(|j| {
        y2.at(0, j, 0, 0) == h0[j] && y2.at(0, j, 0, 1) == h1[j] && y2.at(0, s + j, 0, 0) == g0[j] && y2.at(0, s + j, 0, 1) == g1[j]
    });
    check("bilstm two-step unrolled oracle", ok);

    let g = [1.0f64, 0.0, 1.0, 0.0];
    check("dice p = g gives 0", soft_dice_loss(&g, &g).unwrap().loss.abs() < 1e-10);
    let l0 = soft_dice_loss(&[0.0f64; 4], &g).unwrap().loss;
    check("dice p = 0 gives ~1", (l0 - (1.0 - 1e-7 / (2.0 + 1e-7))).abs() < 1e-10);
    let lh = soft_dice_loss(&[0.5f64; 4], &g).unwrap().loss;
    check("dice uniform half", (lh - (1.0 - (2.0 + 1e-7) / (3.0 + 1e-7))).abs() < 1e-10);

    let pass = failures.is_empty();
    report(2, "layer oracles", pass, &if pass { "all 15 oracles match".to_string() } else { format!("failed: {}", failures.join("; ")) });
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

fn two_cluster_rows(m: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<f64>> = (0..2).map(|_| (0..m).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut rows = Vec::with_capacity(n * m);
    for i in 0..n {
        for v in &protos[i % 2] {
            rows.push(v + noise.sample(&mut rng));
        }
    }
    rows
}

#[test]
fn criterion_3_rbm_learning_signal() {
    let _serial = serial();
    let spec = RbmGroupSpec::new("clusters", vec![MapKind::Adc, MapKind::Mtt], [3, 3, 1]).unwrap();
    let m = spec.n_visible();
    let mut reduced = 0;
    let mut energy_gap = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let rows = two_cluster_rows(m, 2000, 40 + seed);
        let cfg = RbmTrainConfig {
            n_hidden: 32,
            learning_rate: 1e-3,
            epochs: 30,
            patience: 30,
            seed,
            ..Default::default()
        };
        let (rbm, hist) = train_rbm(&rows, &spec, &cfg).unwrap();
        let last = hist.epochs.last().unwrap().train_error;
        let ratio = last / hist.initial_error;
        if ratio <= 0.5 {
            reduced += 1;
        }
        let mut data = rows.clone();
        rbm.stats.apply_in_place(&mut data);
        let fe = |v: &[f64]| -> f64 {
            v.chunks(m).map(|r| rbm.free_energy(r).unwrap()).sum::<f64>() / (v.len() / m) as f64
        };
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let pure: Vec<f64> = (0..data.len()).map(|_| noise.sample(&mut rng)).collect();
        let (fd, fnz) = (fe(&data), fe(&pure));
        if fd < fnz {
            energy_gap += 1;
        }
        lines.push(format!("seed {seed}: err ratio {ratio:.3}, F data {fd:.1} vs noise {fnz:.1}"));
    }
    let pass = reduced >= 4 && energy_gap == 5;
    report(
        3,
        "RBM learning signal",
        pass,
        &format!("{reduced}/5 seeds halve the error, {energy_gap}/5 energy gaps; {}", lines.join("; ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_feature_selection() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut nmi_ok = true;
    for k in 0..5 {
        let x: Vec<f32> = (0..4096).map(|_| rng.random_range(-5.0..5.0) * (k + 1) as f32).collect();
        nmi_ok &= (nmi_sum_of(&x, &x, 64).unwrap() - 1.0).abs() < 1e-9;
    }
    let vol = Volume::new([16, 16, 4], [1.0; 3], MapKind::Feature, (0..1024).map(|i| ((i * 31) % 97) as f32).collect()).unwrap();
    nmi_ok &= (nmi_sum(&vol, &vol, 64).unwrap() - 1.0).abs() < 1e-9;

    let (n, d) = (1500, 8);
    let mut first = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let key = (seed as usize * 3) % d;
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f32> = (0..d).map(|_| rng.random()).collect();
            let mut label = row[key] > 0.5;
            if rng.random_bool(0.1) {
                label = !label;
            }
            x.extend(row);
            y.push(label);
        }
        let rf = train_random_forest(&x, &y, d, &ForestConfig { seed, ..Default::default() }).unwrap();
        let imp = mdi_importances(&rf);
        let best = (0..d).max_by(|&a, &b| imp[a].total_cmp(&imp[b]).then(b.cmp(&a))).unwrap();
        if best == key {
            first += 1;
        }
    }

    let nmi: Vec<f64> = (0..600).map(|i| ((i * 37) % 600) as f64).collect();
    let mdi: Vec<f64> = (0..600).map(|i| ((i * 91) % 600) as f64).collect();
    let r = fuse_and_select("g", &nmi, &mdi, 6).unwrap();
    let mut order: Vec<usize> = (0..600).collect();
    order.sort_by(|&a, &b| (nmi[b] / 599.0 + mdi[b] / 599.0).total_cmp(&(nmi[a] / 599.0 + mdi[a] / 599.0)).then(a.cmp(&b)));
    let mut fuse_ok = r.selected.len() == 6 && r.selected == order[..6];
    fuse_ok &= fuse_and_select("g", &[1.0; 10], &[3.0; 10], 4).unwrap().selected == vec![0, 1, 2, 3];
    let tie = fuse_and_select("g", &[1.0, 0.0, 1.0, 0.5], &[0.0, 1.0, 0.0, 0.5], 3).unwrap();
    fuse_ok &= tie.selected == vec![0, 1, 2];
    let scaled: Vec<f64> = mdi.iter().map(|v| v * 123.0).collect();
    fuse_ok &= fuse_and_select("g", &nmi, &scaled, 6).unwrap().selected == r.selected;

    let pass = nmi_ok && first >= 9 && fuse_ok;
    report(
        4,
        "feature selection",
        pass,
        &format!("NMI(X,X)=1: {nmi_ok}; informative MDI first in {first}/10 seeds; fuse exact M with tie-break: {fuse_ok}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 5

fn mask(dims: [usize; 3], spacing: [f64; 3], f: impl Fn(usize, usize, usize) -> bool) -> Volume {
    let mut d = vec![0.0; dims[0] * dims[1] * dims[2]];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                d[x + dims[0] * (y + dims[1] * z)] = f(x, y, z) as u8 as f32;
            }
        }
    }
    Volume::new(dims, spacing, MapKind::Mask, d).unwrap()
}

#[test]
fn criterion_5_metric_oracles() {
    let _serial = serial();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let one = [1.0; 3];
    let a = mask([10, 10, 2], one, |x, _, z| x < 5 && z == 0);
    let b = mask([10, 10, 2], one, |x, _, z| x >= 5 && z == 0);
    check("dice identical", dice(&a, &a).unwrap() == 1.0);
    check("dice disjoint", dice(&a, &b).unwrap() == 0.0);
    let p = mask([10, 10, 2], one, |_, _, z| z == 0);
    let q = mask([10, 10, 2], one, |_, y, z| (z == 0 && y >= 5) || (z == 1 && y < 5));
    check("dice 100/100 overlap 50", dice(&p, &q).unwrap() == 0.5);
    let e = mask([10, 10, 2], one, |_, _, _| false);
    check("dice both empty", dice(&e, &e).unwrap() == 1.0);
    let (pr, rc) = (precision(&a, &a).unwrap(), recall(&a, &a).unwrap());
    check("precision recall identical", pr.value == 1.0 && rc.value == 1.0);
    let sup = mask([10, 10, 2], one, |x, _, _| x < 5);
    let (pr, rc) = (precision(&sup, &a).unwrap(), recall(&sup, &a).unwrap());
    check("superset twice the size", pr.value == 0.5 && rc.value == 1.0);
    let (pr, rc) = (precision(&e, &a).unwrap(), recall(&e, &a).unwrap());
    check("empty prediction", pr.value == 0.0 && pr.undefined && rc.value == 0.0 && !rc.undefined);

    let single = mask([3, 3, 3], one, |x, y, z| (x, y, z) == (1, 1, 1));
    check("surface single voxel", surface_voxels(&single, one) == vec![[1.0, 1.0, 1.0]]);
    let cube = mask([5, 5, 5], one, |x, y, z| (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z));
    let shell = surface_voxels(&cube, one);
    check("surface cube shell", shell.len() == 26 && !shell.contains(&[2.0, 2.0, 2.0]));
    let sp = [1.0, 1.0, 5.0];
    let v = mask([2, 2, 2], sp, |x, y, z| (x, y, z) == (0, 0, 1));
    check("surface spacing", surface_voxels(&v, sp) == vec![[0.0, 0.0, 5.0]]);

    let s0 = mask([6, 6, 1], one, |x, y, _| (x, y) == (0, 0));
    let s1 = mask([6, 6, 1], one, |x, y, _| (x, y) == (3, 4));
    check("hd identical", hausdorff_mm(&cube, &cube, one).unwrap() == 0.0);
    check("hd pythagorean", hausdorff_mm(&s0, &s1, one).unwrap() == 5.0);
    check("hd empty undefined", hausdorff_mm(&e, &a, one).is_err());
    check("assd identical", assd_mm(&cube, &cube, one).unwrap() == 0.0);
    check("assd single voxels", assd_mm(&s0, &s1, one).unwrap() == 5.0);
    check("assd empty undefined", assd_mm(&a, &e, one).is_err());
    check("assd <= hd", assd_mm(&a, &sup, one).unwrap() <= hausdorff_mm(&a, &sup, one).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut agreed = 0;
    let mut max_points = 0;
    let mut bad = Vec::new();
    for i in 0..50 {
        let dims = [rng.random_range(4..20), rng.random_range(4..20), rng.random_range(1..8)];
        let spacing = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.5..6.0)];
        let density = rng.random_range(0.02..0.5);
        let mut draw = || {
            let d: Vec<f32> = (0..dims[0] * dims[1] * dims[2]).map(|_| rng.random_bool(density) as u8 as f32).collect();
            Volume::new(dims, spacing, MapKind::Mask, d).unwrap()
        };
        let (ma, mb) = (draw(), draw());
        let (pa, pb) = (surface_voxels(&ma, spacing), surface_voxels(&mb, spacing));
        if pa.is_empty() || pb.is_empty() || pa.len() > 1000 || pb.len() > 1000 {
            agreed += 1;
            continue;
        }
        max_points = max_points.max(pa.len()).max(pb.len());
        let ok = directed_distances(&pa, &pb, spacing) == directed_distances_brute(&pa, &pb)
            && directed_distances(&pb, &pa, spacing) == directed_distances_brute(&pb, &pa);
        if ok {
            agreed += 1;
        } else {
            bad.push(i);
        }
    }
    check(&format!("grid vs brute force on 50 masks, mismatches {bad:?}"), agreed == 50);

    let pass = failures.is_empty();
    report(
        5,
        "metric oracles",
        pass,
        &if pass {
            format!("all examples exact; 50/50 random masks equal brute force (up to {max_points} surface points)")
        } else {
            format!("failed: {}", failures.join("; "))
        },
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_reference_constants() {
    let _serial = serial();
    let cfg = PipelineConfig::default();
    let train = TrainConfig::default();
    let rbm = RbmTrainConfig::default();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    check("18 channels in dual mode", cfg.grouping == Grouping::Dual && cfg.input_channels().unwrap() == 18);
    check("network input 18", cfg.network_spec().in_channels == 18);
    check("7x7x3 RBM patches", PATCH_3D == [7, 7, 3] && cfg.rbm_groups().unwrap().iter().all(|g| g.patch_shape == [7, 7, 3]));
    check("RBM visible 7*7*3*|C|", cfg.rbm_groups().unwrap().iter().all(|g| g.n_visible() == 147 * g.maps.len()));
    check("84x84 training patches", cfg.patch_size == 84 && train.patch_size == 84);
    check("RBM batch 32", cfg.rbm_batch == 32 && rbm.batch_size == 32 && cfg.rbm_train_config(0).batch_size == 32);
    check("predictor batch 4", cfg.batch == 4 && cfg.train_config().batch_size == 4);
    check("RBM lr 1e-5", cfg.rbm_lr == 1e-5 && rbm.learning_rate == 1e-5);
    check("Adam lr 1e-5", cfg.lr == 1e-5 && cfg.train_config().lr == 1e-5);
    check("350 patches per subject", cfg.patches_per_subject == 350 && cfg.train_config().patches_per_subject == 350);
    check("36/7 split of 43", split_counts(43).unwrap() == (36, 7));
    let (tr, va) = inner_split(43, cfg.validation_fraction, 0).unwrap();
    check("pipeline inner split of 43", tr.len() == 36 && va.len() == 7);
    let line = |len: usize| {
        Volume::new([300, 1, 1], [1.0; 3], MapKind::Mask, (0..300).map(|i| (i < len) as u8 as f32).collect()).unwrap()
    };
    check("component minimum 250", MIN_COMPONENT_VOXELS == 250 && cfg.min_component == 250);
    check("249 removed", postprocess_mask(&line(249), cfg.min_component).unwrap().count_nonzero() == 0);
    check("250 kept", postprocess_mask(&line(250), cfg.min_component).unwrap().count_nonzero() == 250);
    let pass = failures.is_empty();
    report(6, "reference constants", pass, &if pass { "15 introspection checks".to_string() } else { format!("failed: {}", failures.join("; ")) });
    assert!(pass);
}

// ---------------------------------------------------------------- criteria 7, 8

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_strokepred")
}

fn benchmark_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_benchmark.cfg")
}

fn run_cli(args: &[String]) -> (bool, String) {
    let out = Command::new(bin()).args(args).env("RUST_LOG", "warn").output().expect("spawn strokepred");
    (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr))
}

fn base_args(cmd: &str, dataset: &Path, out: &Path, seed: u64) -> Vec<String> {
    vec![
        cmd.to_string(),
        "--config".into(),
        benchmark_config().display().to_string(),
        "--set".into(),
        format!("dataset={}", dataset.display()),
        "--set".into(),
        format!("out={}", out.display()),
        "--seed".into(),
        seed.to_string(),
    ]
}

fn mean_dice(out: &Path) -> f64 {
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("mean,")).expect("mean row");
    row.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn criterion_7_synthetic_benchmark() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let mut lower = 0;
    let mut dual0 = f64::NAN;
    let mut slowest = Duration::ZERO;
    let mut ok = true;
    for seed in 0..5u64 {
        let data = dir.path().join(format!("data{seed}"));
        let (s, log) = run_cli(&base_args("synth", &data, &dir.path().join("unused"), seed));
        assert!(s, "synth failed: {log}");
        let mut dice = [0.0; 2];
        for (k, grouping) in ["dual", "none"].iter().enumerate() {
            let out = dir.path().join(format!("{grouping}{seed}"));
            let mut args = base_args("run-all", &data, &out, seed);
            args.extend(["--set".to_string(), format!("grouping={grouping}")]);
            let start = Instant::now();
            let (s, log) = run_cli(&args);
            let took = start.elapsed();
            if !s {
                ok = false;
                lines.push(format!("seed {seed} {grouping} failed: {}", log.lines().last().unwrap_or("")));
                continue;
            }
            if k == 0 {
                slowest = slowest.max(took);
            }
            dice[k] = mean_dice(&out);
        }
        if seed == 0 {
            dual0 = dice[0];
        }
        if dice[1] < dice[0] {
            lower += 1;
        }
        lines.push(format!("seed {seed}: dual {:.3} none {:.3}", dice[0], dice[1]));
    }
    let pass = ok && dual0 >= 0.70 && lower >= 4 && slowest < Duration::from_secs(30 * 60);
    report(
        7,
        "synthetic benchmark",
        pass,
        &format!(
            "dual Dice {dual0:.3} >= 0.70; none lower in {lower}/5 seeds; slowest dual run {:.0}s < 1800s; {}",
            slowest.as_secs_f64(),
            lines.join("; ")
        ),
    );
    assert!(pass);
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn copy_tree(from: &Path, to: &Path) {
    for (rel, bytes) in tree_bytes(from) {
        let dst = to.join(rel);
        fs::create_dir_all(dst.parent().unwrap()).unwrap();
        fs::write(dst, bytes).unwrap();
    }
}

#[test]
fn criterion_8_determinism() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let seed = 3;
    let (s, log) = run_cli(&base_args("synth", &data, &out, seed));
    assert!(s, "synth failed: {log}");
    let mut args = base_args("run-all", &data, &out, seed);
    args.push("--deterministic".into());
    for kv in ["synth_cases=16", "rbm_epochs=3", "epochs=2", "patches_per_subject=12", "rbm_patches_per_case=200"] {
        args.extend(["--set".to_string(), kv.to_string()]);
    }
    let (s1, log1) = run_cli(&args);
    assert!(s1, "first run failed: {log1}");
    let first = dir.path().join("first");
    copy_tree(&out, &first);
    fs::remove_dir_all(&out).unwrap();
    let (s2, log2) = run_cli(&args);
    assert!(s2, "second run failed: {log2}");
    let (a, b) = (tree_bytes(&first), tree_bytes(&out));
    let differing: Vec<String> =
        a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).map(|k| k.display().to_string()).collect();
    let pass = !a.is_empty() && differing.is_empty();
    report(
        8,
        "determinism",
        pass,
        &format!("{} artifact files compared, {} differ {:?}", a.len(), differing.len(), differing),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_inference_budget() {
    let _serial = serial();
    let cfg = PipelineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rbms = Vec::new();
    let mut selections = Vec::new();
    for g in cfg.rbm_groups().unwrap() {
        let r = Rbm::new(g.clone(), cfg.rbm_hidden, 0.01, &mut rng).unwrap();
        let zeros = vec![0.0; cfg.rbm_hidden];
        selections.push(SelectionResult {
            group: g.name.clone(),
            selected: (0..cfg.features_per_rbm).map(|k| k * 97 % cfg.rbm_hidden).collect(),
            nmi_scores: zeros.clone(),
            mdi_scores: zeros.clone(),
            fused: zeros,
        });
        rbms.push(r);
    }
    let spec = cfg.network_spec();
    let (network, params) = Network::build::<f32>(&spec, 9).unwrap();
    let channels = channel_names(&rbms, &selections);
    let header = CheckpointHeader {
        format_version: NET_FORMAT_VERSION,
        spec: spec.clone(),
        entries: params.entries.clone(),
        channels,
        norm: ChannelNorm::identity(spec.in_channels),
    };
    let art = PredictionArtifacts {
        config: cfg.clone(),
        rbms,
        selections,
        network,
        checkpoint: PredictorCheckpoint { header, params },
    };
    let synth = SyntheticSpec { dims: [256, 256, 32], radius_range: (30.0, 45.0), z_radius_range: (8.0, 11.0), ..Default::default() };
    let case = generate_case(&synth, 0).unwrap();
    let start = Instant::now();
    let pred = predict_case(&art, &case).unwrap();
    let took = start.elapsed();
    let pass = pred.mask.dims() == [256, 256, 32] && took <= Duration::from_secs(60);
    report(
        9,
        "inference budget",
        pass,
        &format!(
            "256x256x32 case with the default 18-channel network in {:.1}s <= 60s on {} thread(s)",
            took.as_secs_f64(),
            rayon::current_num_threads()
        ),
    );
    assert!(pass);
}
