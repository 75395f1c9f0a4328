//! Restricted Boltzmann machines with linear Gaussian visible units (σ = 1) and
//! noisy rectified linear hidden units, trained by one-step contrastive divergence.
//!
//! Visible vectors are flattened multi-map patches; every component is
//! standardized with statistics of the training population, which is what makes
//! a fixed unit noise scale on the visible layer reasonable.

mod checkpoint;
mod features;

pub use checkpoint::{load_rbm, save_rbm, RbmSidecar, RBM_FORMAT_VERSION};
pub use features::{
    generate_feature_volumes, hidden_activations_at, naive_feature_at, patch_rows, FeatureVolumeSet,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{gemm, sigmoid, softplus};
use crate::volume::{Dims, MapKind};

pub const LESION_MAPS: [MapKind; 4] = [MapKind::Adc, MapKind::Mtt, MapKind::Ttp, MapKind::Tmax];
pub const HAEMO_MAPS: [MapKind; 3] = [MapKind::Adc, MapKind::Rcbv, MapKind::Rcbf];
pub const PATCH_3D: Dims = [7, 7, 3];
pub const PATCH_2D: Dims = [7, 7, 1];
pub const DEFAULT_HIDDEN_UNITS: usize = 600;
/// Visible noise scale; fixed because the data is standardized.
pub const VISIBLE_SIGMA: f64 = 1.0;

/// Which maps feed a machine and the patch shape cut from each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbmGroupSpec {
    pub name: String,
    pub maps: Vec<MapKind>,
    pub patch_shape: Dims,
}

impl RbmGroupSpec {
    pub fn new(name: impl Into<String>, maps: Vec<MapKind>, patch_shape: Dims) -> Result<Self> {
        let name = name.into();
        if maps.is_empty() {
            return Err(Error::Config(format!("group {name}: no maps")));
        }
        for (i, m) in maps.iter().enumerate() {
            if m.parametric_index().is_none() {
                return Err(Error::Config(format!("group {name}: {m:?} is not a parametric map")));
            }
            if maps[..i].contains(m) {
                return Err(Error::Config(format!("group {name}: duplicate map {m:?}")));
            }
        }
        if patch_shape.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("group {name}: empty patch shape")));
        }
        Ok(RbmGroupSpec { name, maps, patch_shape })
    }

    pub fn lesion(patch_shape: Dims) -> Self {
        RbmGroupSpec { name: "lesion".into(), maps: LESION_MAPS.to_vec(), patch_shape }
    }

    pub fn haemo(patch_shape: Dims) -> Self {
        RbmGroupSpec { name: "haemo".into(), maps: HAEMO_MAPS.to_vec(), patch_shape }
    }

    pub fn single(patch_shape: Dims) -> Self {
        RbmGroupSpec { name: "single".into(), maps: MapKind::PARAMETRIC.to_vec(), patch_shape }
    }

    pub fn n_visible(&self) -> usize {
        self.patch_shape.iter().product::<usize>() * self.maps.len()
    }
}

/// Per-component mean and standard deviation of the training population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Components whose std was zero and got replaced by 1.
    pub flagged: Vec<usize>,
}

impl Standardizer {
    pub fn identity(m: usize) -> Self {
        Standardizer { mean: vec![0.0; m], std: vec![1.0; m], flagged: Vec::new() }
    }

    /// Fits on `rows`, a flat `n x m` buffer.
    pub fn fit(rows: &[f64], m: usize) -> Result<Self> {
        if m == 0 || rows.is_empty() || rows.len() % m != 0 {
            return shape_err("standardizer needs a non-empty n x m buffer");
        }
        let n = (rows.len() / m) as f64;
        let mut mean = vec![0.0; m];
        for row in rows.chunks_exact(m) {
            mean.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        mean.iter_mut().for_each(|a| *a /= n);
        let mut var = vec![0.0; m];
        for row in rows.chunks_exact(m) {
            for ((s, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        let mut flagged = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    flagged.push(i);
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std, flagged })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply_in_place(&self, rows: &mut [f64]) {
        let m = self.mean.len();
        for row in rows.chunks_exact_mut(m) {
            for ((v, &mu), &sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
    }
}

/// Standardizes a flat batch of visible vectors with stored statistics.
pub fn standardize(batch: &[f64], stats: &Standardizer) -> Result<Vec<f64>> {
    if stats.is_empty() || batch.len() % stats.len() != 0 {
        return shape_err("batch length is not a multiple of the visible size");
    }
    let mut out = batch.to_vec();
    stats.apply_in_place(&mut out);
    Ok(out)
}

/// `max(0, x)`: the noise-free NReLU activation.
pub fn nrelu_mean(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// `max(0, x + ε)`, `ε ~ N(0, sigmoid(x))`.
pub fn nrelu_sample<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let eps: f64 = StandardNormal.sample(rng);
            (v + sigmoid(v).sqrt() * eps).max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rbm {
    pub spec: RbmGroupSpec,
    pub n_visible: usize,
    pub n_hidden: usize,
    /// `n_hidden x n_visible`, row-major.
    pub weights: Vec<f64>,
    pub vis_bias: Vec<f64>,
    pub hid_bias: Vec<f64>,
    pub stats: Standardizer,
}

/// Momentum state, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub weights: Vec<f64>,
    pub vis_bias: Vec<f64>,
    pub hid_bias: Vec<f64>,
}

impl Velocity {
    pub fn zeros(rbm: &Rbm) -> Self {
        Velocity {
            weights: vec![0.0; rbm.weights.len()],
            vis_bias: vec![0.0; rbm.n_visible],
            hid_bias: vec![0.0; rbm.n_hidden],
        }
    }
}

/// CD-1 parameter gradient (ascent direction), averaged over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Cd1Gradient {
    pub weights: Vec<f64>,
    pub vis_bias: Vec<f64>,
    pub hid_bias: Vec<f64>,
}

impl Rbm {
    /// Zero biases and `N(0, init_std²)` weights.
    pub fn new<R: Rng + ?Sized>(spec: RbmGroupSpec, n_hidden: usize, init_std: f64, rng: &mut R) -> Result<Self> {
        if n_hidden == 0 {
            return Err(Error::Config("RBM needs at least one hidden unit".into()));
        }
        let m = spec.n_visible();
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::Config(e.to_string()))?;
        let weights = (0..n_hidden * m).map(|_| normal.sample(rng)).collect();
        Ok(Rbm {
            spec,
            n_visible: m,
            n_hidden,
            weights,
            vis_bias: vec![0.0; m],
            hid_bias: vec![0.0; n_hidden],
            stats: Standardizer::identity(m),
        })
    }

    /// Builds a machine from explicit parameters.
    pub fn from_parts(
        spec: RbmGroupSpec,
        weights: Vec<f64>,
        vis_bias: Vec<f64>,
        hid_bias: Vec<f64>,
        stats: Standardizer,
    ) -> Result<Self> {
        let m = spec.n_visible();
        let n = hid_bias.len();
        if weights.len() != n * m || vis_bias.len() != m || stats.len() != m {
            return shape_err("RBM parameter shapes disagree with the group spec");
        }
        if stats.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Data("standardizer std must be positive".into()));
        }
        Ok(Rbm { spec, n_visible: m, n_hidden: n, weights, vis_bias, hid_bias, stats })
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.vis_bias).chain(&self.hid_bias).all(|v| v.is_finite())
    }

    /// `x = W v + c` for one standardized visible vector.
    pub fn hidden_preactivation(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_visible {
            return shape_err(format!("visible vector has {} entries, expected {}", v.len(), self.n_visible));
        }
        Ok(self.hidden_preactivation_batch(v, 1))
    }

    /// Row-wise `X = V Wᵀ + c` for a flat `batch x n_visible` buffer.
    pub fn hidden_preactivation_batch(&self, v: &[f64], batch: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(batch * self.n_hidden);
        for _ in 0..batch {
            x.extend_from_slice(&self.hid_bias);
        }
        gemm(false, true, batch, self.n_hidden, self.n_visible, 1.0, v, &self.weights, 1.0, &mut x);
        x
    }

    /// Mean-field reconstruction `v̂ = b + Wᵀ h`.
    pub fn visible_mean(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.n_hidden {
            return shape_err(format!("hidden vector has {} entries, expected {}", h.len(), self.n_hidden));
        }
        Ok(self.visible_mean_batch(h, 1))
    }

    pub fn visible_mean_batch(&self, h: &[f64], batch: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(batch * self.n_visible);
        for _ in 0..batch {
            v.extend_from_slice(&self.vis_bias);
        }
        gemm(false, false, batch, self.n_visible, self.n_hidden, 1.0, h, &self.weights, 1.0, &mut v);
        v
    }

    /// Free energy with the hidden term of a binary layer:
    /// `½‖v − b‖² − Σ_j softplus(w_j·v + c_j)`.
    pub fn free_energy(&self, v: &[f64]) -> Result<f64> {
        let x = self.hidden_preactivation(v)?;
        let quad: f64 = v.iter().zip(&self.vis_bias).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
        Ok(quad - x.iter().map(|&xj| softplus(xj)).sum::<f64>())
    }

    /// Mean squared error of the deterministic reconstruction `b + Wᵀ max(0, W v + c)`.
    pub fn reconstruction_error(&self, v: &[f64], batch: usize) -> f64 {
        if batch == 0 {
            return 0.0;
        }
        let h = nrelu_mean(&self.hidden_preactivation_batch(v, batch));
        let r = self.visible_mean_batch(&h, batch);
        v.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / v.len() as f64
    }

    /// One CD-1 step on a standardized batch; returns the batch reconstruction error.
    ///
    /// Positive statistics use noise-free hidden activations; the negative chain
    /// samples hidden units once, reconstructs the visible mean and recomputes the
    /// noise-free hidden activations from it.
    pub fn cd1_update<R: Rng + ?Sized>(
        &mut self,
        batch: &[f64],
        lr: f64,
        momentum: f64,
        velocity: &mut Velocity,
        rng: &mut R,
    ) -> Result<f64> {
        let m = self.n_visible;
        if batch.is_empty() || batch.len() % m != 0 {
            return shape_err("cd1_update needs a non-empty batch of whole visible vectors");
        }
        let b = batch.len() / m;
        let x_pos = self.hidden_preactivation_batch(batch, b);
        let h_pos = nrelu_mean(&x_pos);
        let h_sample = nrelu_sample(&x_pos, rng);
        let v_neg = self.visible_mean_batch(&h_sample, b);
        let h_neg = nrelu_mean(&self.hidden_preactivation_batch(&v_neg, b));
        let grad = cd1_gradient(batch, &h_pos, &v_neg, &h_neg, m, self.n_hidden)?;
        let recon = batch.iter().zip(&v_neg).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() / batch.len() as f64;

        let step = |p: &mut [f64], vel: &mut [f64], g: &[f64]| {
            for ((p, v), g) in p.iter_mut().zip(vel.iter_mut()).zip(g) {
                *v = momentum * *v + lr * g;
                *p += *v;
            }
        };
        step(&mut self.weights, &mut velocity.weights, &grad.weights);
        step(&mut self.vis_bias, &mut velocity.vis_bias, &grad.vis_bias);
        step(&mut self.hid_bias, &mut velocity.hid_bias, &grad.hid_bias);
        if !self.is_finite() || !recon.is_finite() {
            return Err(Error::Numeric(format!(
                "RBM {}: non-finite parameters after CD-1 update (lr {lr}, recon {recon})",
                self.spec.name
            )));
        }
        Ok(recon)
    }
}

/// `(⟨v⁺h⁺ᵀ⟩ − ⟨v⁻h⁻ᵀ⟩) / |batch|` and the matching bias terms.
pub fn cd1_gradient(
    v_pos: &[f64],
    h_pos: &[f64],
    v_neg: &[f64],
    h_neg: &[f64],
    n_visible: usize,
    n_hidden: usize,
) -> Result<Cd1Gradient> {
    let b = v_pos.len() / n_visible.max(1);
    if b == 0
        || v_pos.len() != b * n_visible
        || v_neg.len() != v_pos.len()
        || h_pos.len() != b * n_hidden
        || h_neg.len() != h_pos.len()
    {
        return shape_err("cd1_gradient: phase shapes disagree");
    }
    let inv = 1.0 / b as f64;
    let mut weights = vec![0.0; n_hidden * n_visible];
    gemm(true, false, n_hidden, n_visible, b, inv, h_pos, v_pos, 0.0, &mut weights);
    gemm(true, false, n_hidden, n_visible, b, -inv, h_neg, v_neg, 1.0, &mut weights);
    let mut vis_bias = vec![0.0; n_visible];
    for (p, n) in v_pos.chunks_exact(n_visible).zip(v_neg.chunks_exact(n_visible)) {
        for ((g, a), c) in vis_bias.iter_mut().zip(p).zip(n) {
            *g += (a - c) * inv;
        }
    }
    let mut hid_bias = vec![0.0; n_hidden];
    for (p, n) in h_pos.chunks_exact(n_hidden).zip(h_neg.chunks_exact(n_hidden)) {
        for ((g, a), c) in hid_bias.iter_mut().zip(p).zip(n) {
            *g += (a - c) * inv;
        }
    }
    Ok(Cd1Gradient { weights, vis_bias, hid_bias })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmTrainConfig {
    pub n_hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub validation_fraction: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for RbmTrainConfig {
    fn default() -> Self {
        RbmTrainConfig {
            n_hidden: DEFAULT_HIDDEN_UNITS,
            learning_rate: 1e-5,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            patience: 5,
            validation_fraction: 0.1,
            init_std: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmEpoch {
    pub epoch: usize,
    /// Mean CD-1 reconstruction error over the epoch's batches.
    pub cd_error: f64,
    /// Deterministic reconstruction error on the training split after the epoch.
    pub train_error: f64,
    pub validation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmHistory {
    /// Deterministic reconstruction error of the untrained machine on the training split.
    pub initial_error: f64,
    pub epochs: Vec<RbmEpoch>,
    pub best_epoch: usize,
}

/// Trains one machine on raw (unstandardized) flat patch vectors.
///
/// Statistics are fitted on the whole population, a validation share is held out
/// for early stopping, and the best-validation parameters are returned.
pub fn train_rbm(patches: &[f64], spec: &RbmGroupSpec, cfg: &RbmTrainConfig) -> Result<(Rbm, RbmHistory)> {
    let m = spec.n_visible();
    if patches.is_empty() {
        return Err(Error::Data(format!("RBM {}: empty training set", spec.name)));
    }
    if patches.len() % m != 0 {
        return shape_err(format!("RBM {}: patch buffer is not a multiple of {m}", spec.name));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("RBM batch size must be positive".into()));
    }
    let n = patches.len() / m;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stats = Standardizer::fit(patches, m)?;
    let mut data = patches.to_vec();
    stats.apply_in_place(&mut data);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 10 { ((n as f64) * cfg.validation_fraction).round() as usize } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val);
    let gather = |idx: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            out.extend_from_slice(&data[i * m..(i + 1) * m]);
        }
        out
    };
    let train = gather(train_idx);
    let val = gather(val_idx);
    let n_train = train_idx.len();

    let mut rbm = Rbm::new(spec.clone(), cfg.n_hidden, cfg.init_std, &mut rng)?;
    rbm.stats = stats;
    let mut velocity = Velocity::zeros(&rbm);
    let initial_error = rbm.reconstruction_error(&train, n_train);

    let mut best = rbm.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut perm: Vec<usize> = (0..n_train).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size * m);
    for epoch in 1..=cfg.epochs {
        perm.shuffle(&mut rng);
        let mut cd_sum = 0.0;
        let mut n_batches = 0;
        for chunk in perm.chunks(cfg.batch_size) {
            batch.clear();
            for &i in chunk {
                batch.extend_from_slice(&train[i * m..(i + 1) * m]);
            }
            cd_sum += rbm.cd1_update(&batch, cfg.learning_rate, cfg.momentum, &mut velocity, &mut rng)?;
            n_batches += 1;
        }
        let train_error = rbm.reconstruction_error(&train, n_train);
        let validation_error =
            if val_idx.is_empty() { train_error } else { rbm.reconstruction_error(&val, val_idx.len()) };
        epochs.push(RbmEpoch { epoch, cd_error: cd_sum / n_batches as f64, train_error, validation_error });
        log::debug!("rbm {} epoch {epoch}: train {train_error:.5} val {validation_error:.5}", spec.name);
        if validation_error < best_score {
            best_score = validation_error;
            best_epoch = epoch;
            best = rbm.clone();
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    if best_epoch == 0 {
        best = rbm;
    }
    Ok((best, RbmHistory { initial_error, epochs, best_epoch }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n_hidden: usize, weights: Vec<f64>, hid: Vec<f64>) -> Rbm {
        let spec = RbmGroupSpec::new("t", vec![MapKind::Adc, MapKind::Mtt], [1, 1, 1]).unwrap();
        let m = spec.n_visible();
        assert_eq!(hid.len(), n_hidden);
        Rbm::from_parts(spec, weights, vec![0.0; m], hid, Standardizer::identity(m)).unwrap()
    }

    #[test]
    fn standardize_examples() {
        let stats = Standardizer { mean: vec![5.0], std: vec![2.0], flagged: vec![] };
        assert_eq!(standardize(&[9.0], &stats).unwrap(), vec![2.0]);

        let rows: Vec<f64> = (0..200).map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.0).collect();
        let fitted = Standardizer::fit(&rows, 2).unwrap();
        let z = standardize(&rows, &fitted).unwrap();
        for c in 0..2 {
            let mean: f64 = z.iter().skip(c).step_by(2).sum::<f64>() / 100.0;
            let var: f64 = z.iter().skip(c).step_by(2).map(|v| v * v).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }

        let constant = vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0];
        let s = Standardizer::fit(&constant, 2).unwrap();
        assert_eq!(s.flagged, vec![0]);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(standardize(&constant, &s).unwrap()[0], 0.0);
    }

    #[test]
    fn preactivation_examples() {
        let zero = tiny(3, vec![0.0; 6], vec![0.0; 3]);
        assert_eq!(zero.hidden_preactivation(&[1.0, -2.0]).unwrap(), vec![0.0; 3]);

        let one = tiny(1, vec![1.0, 1.0], vec![0.5]);
        assert_eq!(one.hidden_preactivation(&[1.0, 2.0]).unwrap(), vec![3.5]);
        assert!(one.hidden_preactivation(&[1.0]).is_err());
    }

    #[test]
    fn nrelu_mean_examples() {
        assert_eq!(nrelu_mean(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        let x = [-0.3, 0.7, 1.9];
        let scaled: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        let a = nrelu_mean(&scaled);
        let b: Vec<f64> = nrelu_mean(&x).iter().map(|v| v * 2.5).collect();
        assert_eq!(a, b);
        let pos = nrelu_mean(&[0.0, 1.0, 3.0]);
        assert_eq!(nrelu_mean(&pos), pos);
    }

    #[test]
    fn nrelu_sample_saturation_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let low = vec![-100.0; 1000];
        assert!(nrelu_sample(&low, &mut rng).iter().all(|&h| h == 0.0));

        // Monte-Carlo: E[max(0, 100 + ε)] with ε ~ N(0, ~1) is 100.
        let high = vec![100.0; 200_000];
        let h = nrelu_sample(&high, &mut rng);
        assert!(h.iter().all(|&v| v >= 0.0));
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        assert!((mean - 100.0).abs() < 0.05, "mean {mean}");

        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let x = [0.3, -0.2, 1.5];
        assert_eq!(nrelu_sample(&x, &mut r1), nrelu_sample(&x, &mut r2));
    }

    #[test]
    fn visible_mean_examples() {
        let rbm = tiny(2, vec![1.0, 2.0, -1.0, 0.5], vec![0.0, 0.0]);
        let mut with_bias = rbm.clone();
        with_bias.vis_bias = vec![0.25, -0.75];
        assert_eq!(with_bias.visible_mean(&[0.0, 0.0]).unwrap(), vec![0.25, -0.75]);

        let mut zero_w = with_bias.clone();
        zero_w.weights = vec![0.0; 4];
        assert_eq!(zero_w.visible_mean(&[3.0, 7.0]).unwrap(), vec![0.25, -0.75]);

        // b + Wᵀh by hand: h = [2, 3]; column 0: 1*2 + (-1)*3 = -1; column 1: 2*2 + 0.5*3 = 5.5
        let v = with_bias.visible_mean(&[2.0, 3.0]).unwrap();
        assert_eq!(v, vec![0.25 - 1.0, -0.75 + 5.5]);
        assert!(rbm.visible_mean(&[1.0]).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let spec = RbmGroupSpec::new("t", vec![MapKind::Adc], [2, 2, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rbm = Rbm::new(spec, 5, 0.1, &mut rng).unwrap();
        let before = rbm.clone();
        let mut vel = Velocity::zeros(&rbm);
        let batch: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        rbm.cd1_update(&batch, 0.0, 0.9, &mut vel, &mut rng).unwrap();
        assert_eq!(rbm, before);
    }

    #[test]
    fn equal_phases_give_zero_gradient() {
        let v: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let h: Vec<f64> = (0..6).map(|i| i as f64 * 0.2).collect();
        let g = cd1_gradient(&v, &h, &v, &h, 4, 3).unwrap();
        assert!(g.weights.iter().chain(&g.vis_bias).chain(&g.hid_bias).all(|&x| x == 0.0));
    }

    #[test]
    fn repeated_pattern_reconstruction_improves() {
        let spec = RbmGroupSpec::new("t", vec![MapKind::Adc], [4, 4, 1]).unwrap();
        let pattern: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 1.5 } else { -0.5 }).collect();
        let batch: Vec<f64> = pattern.iter().cycle().take(16 * 8).copied().collect();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rbm = Rbm::new(spec.clone(), 8, 0.01, &mut rng).unwrap();
            let mut vel = Velocity::zeros(&rbm);
            let first = rbm.cd1_update(&batch, 1e-3, 0.9, &mut vel, &mut rng).unwrap();
            let mut last = first;
            for _ in 1..500 {
                last = rbm.cd1_update(&batch, 1e-3, 0.9, &mut vel, &mut rng).unwrap();
            }
            assert!(last < 0.5 * first, "seed {seed}: {first} -> {last}");
        }
    }

    #[test]
    fn training_defaults() {
        let cfg = RbmTrainConfig::default();
        assert_eq!(cfg.learning_rate, 1e-5);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.n_hidden, 600);
    }

    #[test]
    fn empty_training_set_is_error() {
        let spec = RbmGroupSpec::lesion(PATCH_3D);
        assert!(train_rbm(&[], &spec, &RbmTrainConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let spec = RbmGroupSpec::new("t", vec![MapKind::Adc], [3, 3, 1]).unwrap();
        let patches: Vec<f64> = (0..9 * 64).map(|i| ((i * 7919) % 101) as f64 / 50.0).collect();
        let cfg = RbmTrainConfig { n_hidden: 6, epochs: 4, learning_rate: 1e-3, seed: 5, ..Default::default() };
        let (a, ha) = train_rbm(&patches, &spec, &cfg).unwrap();
        let (b, hb) = train_rbm(&patches, &spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn group_spec_validation() {
        assert!(RbmGroupSpec::new("x", vec![], PATCH_3D).is_err());
        assert!(RbmGroupSpec::new("x", vec![MapKind::Adc, MapKind::Adc], PATCH_3D).is_err());
        assert_eq!(RbmGroupSpec::lesion(PATCH_3D).n_visible(), 588);
        assert_eq!(RbmGroupSpec::haemo(PATCH_3D).n_visible(), 441);
    }
}
