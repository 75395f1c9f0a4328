//! Patch-based training of the predictor and slice-wise volume inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::soft_dice_loss;
use super::network::{Network, NetworkSpec};
use super::params::{adam_step, AdamState, Parameters};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::volume::{rotate90, sample_training_patches, MapKind, Patch2d, PreprocessedCase, Provenance, SamplingConfig, Volume};

/// One subject as the predictor sees it: stacked input channels and the lesion mask.
#[derive(Debug, Clone)]
pub struct PredictorCase {
    pub case_id: String,
    pub channels: Vec<Volume>,
    pub gt: Option<Volume>,
}

impl PredictorCase {
    pub fn dims(&self) -> [usize; 3] {
        self.channels[0].dims()
    }

    fn check(&self, in_channels: usize) -> Result<()> {
        if self.channels.len() != in_channels {
            return shape_err(format!(
                "case {}: {} input channels, network expects {in_channels}",
                self.case_id,
                self.channels.len()
            ));
        }
        let d = self.dims();
        if self.channels.iter().any(|c| c.dims() != d) || self.gt.as_ref().is_some_and(|g| g.dims() != d) {
            return shape_err(format!("case {}: channel dims disagree", self.case_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub patches_per_subject: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Adds the three quarter-turn rotations of every patch.
    pub augment: bool,
    pub lesion_fraction: f64,
    /// Stops after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 84,
            patches_per_subject: 350,
            batch_size: 4,
            lr: 1e-5,
            epochs: 100,
            augment: true,
            lesion_fraction: 0.5,
            patience: None,
            seed: 0,
        }
    }
}

/// Fraction of subjects held out for validation; 7 of 43.
pub const VALIDATION_FRACTION: f64 = 7.0 / 43.0;

/// `(train, validation)` subject counts.
pub fn split_counts(n: usize) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::Data(format!("training needs at least 2 cases, got {n}")));
    }
    let v = ((n as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, n - 1);
    Ok((n - v, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_cases: Vec<String>,
    pub validation_cases: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRef {
    pub case: usize,
    pub center: [usize; 3],
    pub rotation: u8,
}

fn as_preprocessed(c: &PredictorCase) -> PreprocessedCase {
    let d = c.dims();
    PreprocessedCase {
        case_id: c.case_id.clone(),
        maps: c.channels.clone(),
        gt: c.gt.clone(),
        provenance: Provenance { original_dims: d, original_spacing: c.channels[0].spacing() },
    }
}

/// Patch centres for every case, each repeated per rotation when augmenting.
pub fn sample_patch_refs(cases: &[PredictorCase], cfg: &TrainConfig, seed: u64, augment: bool) -> Result<Vec<PatchRef>> {
    let mut refs = Vec::new();
    let sampling = SamplingConfig { lesion_fraction: cfg.lesion_fraction };
    for (i, c) in cases.iter().enumerate() {
        let centers =
            sample_training_patches(&as_preprocessed(c), cfg.patches_per_subject, seed.wrapping_add(i as u64), sampling)?;
        for center in centers {
            let rots: &[u8] = if augment { &[0, 1, 2, 3] } else { &[0] };
            refs.extend(rots.iter().map(|&rotation| PatchRef { case: i, center, rotation }));
        }
    }
    Ok(refs)
}

/// Square in-plane patch of all channels plus the label, rotated by the reference's quarter turns.
pub fn extract_training_patch(case: &PredictorCase, r: &PatchRef, size: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let gt = case.gt.as_ref().ok_or_else(|| Error::Data(format!("case {} has no ground truth", case.case_id)))?;
    let c = case.channels.len();
    let half = (size / 2) as isize;
    let [cx, cy, z] = r.center;
    let mut data = Vec::with_capacity((c + 1) * size * size);
    for v in case.channels.iter().chain(std::iter::once(gt)) {
        for dy in 0..size as isize {
            for dx in 0..size as isize {
                data.push(v.get_padded(cx as isize - half + dx, cy as isize - half + dy, z as isize));
            }
        }
    }
    let p = rotate90(&Patch2d::new(c + 1, size, size, data)?, r.rotation)?;
    let mut data = p.data;
    let label = data.split_off(c * size * size);
    Ok((data, label))
}

fn assemble(
    cases: &[PredictorCase],
    refs: &[PatchRef],
    size: usize,
    channels: usize,
) -> Result<(Tensor<f32>, Vec<f32>)> {
    let mut x = Vec::with_capacity(refs.len() * channels * size * size);
    let mut g = Vec::with_capacity(refs.len() * size * size);
    for r in refs {
        let (d, l) = extract_training_patch(&cases[r.case], r, size)?;
        x.extend(d);
        g.extend(l);
    }
    Ok((Tensor::from_vec(refs.len(), channels, size, size, x)?, g))
}

/// Mean per-sample loss and summed per-sample gradients, reduced in sample order.
fn batch_gradient(net: &Network, p: &Parameters<f32>, x: &Tensor<f32>, g: &[f32]) -> Result<(f64, Vec<f32>)> {
    let per = x.plane();
    let results: Vec<Result<(f64, Vec<f32>)>> = (0..x.n)
        .into_par_iter()
        .map(|i| {
            let xi = Tensor::from_vec(1, x.c, x.h, x.w, x.sample(i).to_vec())?;
            let (y, cache) = net.forward_cached(p, &xi)?;
            let l = soft_dice_loss(&y.data, &g[i * per..(i + 1) * per])?;
            let dy = Tensor { data: l.grad, ..y };
            Ok((l.loss as f64, net.backward(p, cache, &dy)?))
        })
        .collect();
    let scale = 1.0 / x.n as f32;
    let mut total = vec![0.0f32; p.len()];
    let mut loss = 0.0;
    for r in results {
        let (l, gr) = r?;
        loss += l / x.n as f64;
        for (t, v) in total.iter_mut().zip(gr) {
            *t += v * scale;
        }
    }
    Ok((loss, total))
}

fn evaluate_loss(net: &Network, p: &Parameters<f32>, cases: &[PredictorCase], refs: &[PatchRef], cfg: &TrainConfig) -> Result<f64> {
    if refs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in refs.chunks(cfg.batch_size.max(1)) {
        let (x, g) = assemble(cases, chunk, cfg.patch_size, net.spec.in_channels)?;
        let y = net.forward(p, &x)?;
        let per = x.plane();
        for i in 0..x.n {
            total += soft_dice_loss(&y.data[i * per..(i + 1) * per], &g[i * per..(i + 1) * per])?.loss as f64;
        }
    }
    Ok(total / refs.len() as f64)
}

pub struct TrainedPredictor {
    pub network: Network,
    pub params: Parameters<f32>,
    pub history: TrainHistory,
}

/// Trains on `train` with best-validation selection on `validation`.
pub fn train_predictor(
    spec: &NetworkSpec,
    train: &[PredictorCase],
    validation: &[PredictorCase],
    cfg: &TrainConfig,
) -> Result<TrainedPredictor> {
    if train.is_empty() || train.len() + validation.len() < 2 {
        return Err(Error::Data("training needs at least 2 cases".into()));
    }
    if cfg.batch_size == 0 || cfg.patch_size == 0 || cfg.patches_per_subject == 0 {
        return Err(Error::Config("batch size, patch size and patches per subject must be positive".into()));
    }
    if cfg.patch_size % spec.spatial_multiple() != 0 {
        return Err(Error::Config(format!(
            "patch size {} must be a multiple of {}",
            cfg.patch_size,
            spec.spatial_multiple()
        )));
    }
    for c in train.iter().chain(validation) {
        c.check(spec.in_channels)?;
    }
    let (network, mut params) = Network::build::<f32>(spec, cfg.seed)?;
    let train_refs = sample_patch_refs(train, cfg, cfg.seed ^ 0x5eed_0001, cfg.augment)?;
    let val_refs = sample_patch_refs(validation, cfg, cfg.seed ^ 0x5eed_0002, false)?;
    let mut adam = AdamState::new(params.len());
    let mut history = TrainHistory {
        train_cases: train.iter().map(|c| c.case_id.clone()).collect(),
        validation_cases: validation.iter().map(|c| c.case_id.clone()).collect(),
        best_validation_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    let mut order = train_refs.clone();
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, g) = assemble(train, chunk, cfg.patch_size, spec.in_channels)?;
            let (loss, grads) = batch_gradient(&network, &params, &x, &g)?;
            if !loss.is_finite() || grads.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss or gradient at epoch {epoch}")));
            }
            adam_step(&mut params.data, &grads, &mut adam, cfg.lr)?;
            sum += loss;
            batches += 1;
        }
        let train_loss = sum / batches.max(1) as f64;
        let validation_loss =
            if val_refs.is_empty() { train_loss } else { evaluate_loss(&network, &params, validation, &val_refs, cfg)? };
        log::info!("epoch {epoch}: train {train_loss:.4} validation {validation_loss:.4}");
        history.epochs.push(EpochRecord { epoch, train_loss, validation_loss });
        if validation_loss < history.best_validation_loss {
            history.best_validation_loss = validation_loss;
            history.best_epoch = epoch;
            best.data.copy_from_slice(&params.data);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    if cfg.epochs == 0 {
        best = params;
    }
    Ok(TrainedPredictor { network, params: best, history })
}

/// Infers every axial slice at full in-plane extent and stacks the probabilities.
pub fn predict_volume(net: &Network, params: &Parameters<f32>, channels: &[&Volume]) -> Result<Volume> {
    let Some(first) = channels.first() else {
        return shape_err("predict_volume needs input channels");
    };
    let [nx, ny, nz] = first.dims();
    if channels.iter().any(|c| c.dims() != first.dims()) {
        return shape_err("predict_volume: channel dims disagree");
    }
    let m = net.spec.spatial_multiple();
    if nx % m != 0 || ny % m != 0 {
        return shape_err(format!("predict_volume: in-plane dims {nx}x{ny} not divisible by {m}"));
    }
    let plane = nx * ny;
    let slices: Vec<Result<Vec<f32>>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut x = Vec::with_capacity(channels.len() * plane);
            for c in channels {
                x.extend_from_slice(&c.data()[z * plane..(z + 1) * plane]);
            }
            let t = Tensor::from_vec(1, channels.len(), ny, nx, x)?;
            Ok(net.forward(params, &t)?.data)
        })
        .collect();
    let mut data = Vec::with_capacity(plane * nz);
    for s in slices {
        data.extend(s?);
    }
    Volume::new(first.dims(), first.spacing(), MapKind::Feature, data)
}
