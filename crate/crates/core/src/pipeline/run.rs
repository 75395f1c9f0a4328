//! Stage implementations shared by the CLI commands.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, PipelineConfig, PredictSplit};
use super::postprocess::postprocess_mask;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_case, format_summary, summarize, write_metrics_csv, MetricsReport};
use crate::nn::{
    load_predictor, predict_volume, save_predictor, train_predictor, ChannelNorm, Network, PredictorCase,
    PredictorCheckpoint, TrainHistory,
};
use crate::rbm::{
    generate_feature_volumes, hidden_activations_at, load_rbm, patch_rows, save_rbm, train_rbm, Rbm, RbmHistory,
};
use crate::selection::{select_units, stratified_sample, SelectionResult};
use crate::synth::{generate_dataset, split_ids, Manifest, MANIFEST_FILE};
use crate::volume::io::{read_json, write_atomic, write_json};
use crate::volume::{
    load_case, preprocess_case_to, read_raw_f32, read_raw_u8, resize_volume, sample_training_patches, write_raw_f32,
    write_raw_u8, Interpolation, MapKind, PatientCase, PreprocessedCase, SamplingConfig, Volume,
};

/// Where every artifact of a run lives, relative to the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.cfg")
    }

    pub fn rbm(&self, group: &str) -> PathBuf {
        self.root.join("rbm").join(format!("{group}.bin"))
    }

    pub fn rbm_history(&self, group: &str) -> PathBuf {
        self.root.join("rbm").join(format!("{group}.history.json"))
    }

    pub fn selection(&self, group: &str) -> PathBuf {
        self.root.join("selection").join(format!("{group}.json"))
    }

    pub fn feature(&self, case_id: &str, group: &str, unit: usize) -> PathBuf {
        self.root.join("features").join(case_id).join(format!("FEAT_{group}_{unit}.f32"))
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("predictor").join("model.bin")
    }

    pub fn train_history(&self) -> PathBuf {
        self.root.join("predictor").join("history.json")
    }

    pub fn prediction_dir(&self, case_id: &str) -> PathBuf {
        self.root.join("predictions").join(case_id)
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Writes the resolved configuration next to the artifacts.
pub fn echo_config(cfg: &PipelineConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    ensure_parent(&layout.config())?;
    write_atomic(&layout.config(), cfg.to_text().as_bytes())
}

/// Case ids of a dataset directory split into training and held-out cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Dataset {
    /// Uses `manifest.json` when present, otherwise a seeded split of the case directories.
    pub fn open(root: &Path, test_fraction: f64, seed: u64) -> Result<Self> {
        let manifest = root.join(MANIFEST_FILE);
        if manifest.exists() {
            let m: Manifest = read_json(&manifest)?;
            return Ok(Dataset { root: root.to_path_buf(), train: m.train, test: m.validation });
        }
        let entries = fs::read_dir(root).map_err(|e| Error::Data(format!("dataset {}: {e}", root.display())))?;
        let mut ids = Vec::new();
        for e in entries {
            let e = e.map_err(|e| Error::io(root, e))?;
            if e.path().join("meta.json").exists() {
                ids.push(e.file_name().to_string_lossy().into_owned());
            }
        }
        if ids.is_empty() {
            return Err(Error::Data(format!("dataset {} contains no cases", root.display())));
        }
        ids.sort();
        let (train, test) = split_ids(&ids, test_fraction, seed);
        Ok(Dataset { root: root.to_path_buf(), train, test })
    }

    pub fn ids(&self, split: PredictSplit) -> Vec<String> {
        match split {
            PredictSplit::Test => self.test.clone(),
            PredictSplit::Train => self.train.clone(),
            PredictSplit::All => {
                let mut all = self.train.clone();
                all.extend(self.test.iter().cloned());
                all.sort();
                all
            }
        }
    }

    pub fn load(&self, id: &str) -> Result<PatientCase> {
        load_case(&self.root.join(id))
    }
}

pub fn open_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    Dataset::open(&cfg.dataset, cfg.test_fraction, derive_seed(cfg.seed, 0x500))
}

pub fn load_preprocessed(ds: &Dataset, ids: &[String], cfg: &PipelineConfig) -> Result<Vec<PreprocessedCase>> {
    ids.par_iter().map(|id| preprocess_case_to(&ds.load(id)?, cfg.common_dims)).collect()
}

fn group_maps<'a>(case: &'a PreprocessedCase, maps: &[MapKind]) -> Result<Vec<&'a Volume>> {
    maps.iter()
        .map(|&k| case.map(k).ok_or_else(|| Error::Data(format!("case {}: missing {k:?} map", case.case_id))))
        .collect()
}

/// Trains one machine per group on brain patches pooled over `cases`.
pub fn train_rbms(cfg: &PipelineConfig, cases: &[PreprocessedCase]) -> Result<Vec<(Rbm, RbmHistory)>> {
    let layout = Layout::new(&cfg.out);
    let mut out = Vec::new();
    for (gi, group) in cfg.rbm_groups()?.into_iter().enumerate() {
        let tc = cfg.rbm_train_config(gi);
        let rows: Vec<Vec<f64>> = cases
            .par_iter()
            .enumerate()
            .map(|(ci, case)| {
                let seed = derive_seed(tc.seed, ci as u64 + 1);
                let brain_only = SamplingConfig { lesion_fraction: 0.0 };
                let centers = sample_training_patches(case, cfg.rbm_patches_per_case, seed, brain_only)?;
                patch_rows(&group_maps(case, &group.maps)?, &centers, group.patch_shape)
            })
            .collect::<Result<_>>()?;
        let patches = rows.concat();
        let (rbm, history) = train_rbm(&patches, &group, &tc)?;
        if !rbm.is_finite() {
            return Err(Error::Numeric(format!("RBM {} diverged", group.name)));
        }
        let path = layout.rbm(&group.name);
        ensure_parent(&path)?;
        save_rbm(&path, &rbm)?;
        write_json(&layout.rbm_history(&group.name), &history)?;
        log::info!("rbm {}: {} patches, best epoch {}", group.name, patches.len() / group.n_visible(), history.best_epoch);
        out.push((rbm, history));
    }
    Ok(out)
}

pub fn load_rbms(cfg: &PipelineConfig) -> Result<Vec<Rbm>> {
    let layout = Layout::new(&cfg.out);
    cfg.rbm_groups()?.iter().map(|g| load_rbm(&layout.rbm(&g.name))).collect()
}

/// Scores every hidden unit of every machine on a stratified voxel sample and keeps the top units.
pub fn select_features(cfg: &PipelineConfig, rbms: &[Rbm], cases: &[PreprocessedCase]) -> Result<Vec<SelectionResult>> {
    let layout = Layout::new(&cfg.out);
    let mut offsets = Vec::with_capacity(cases.len() + 1);
    let mut labels = Vec::new();
    let mut candidates = Vec::new();
    for case in cases {
        offsets.push(labels.len());
        let gt = case.gt.as_ref().ok_or_else(|| Error::Data(format!("case {} has no ground truth", case.case_id)))?;
        let brain = case.brain_mask();
        candidates.extend(brain.iter().enumerate().filter_map(|(i, &b)| b.then_some(labels.len() + i)));
        labels.extend(gt.data().iter().map(|&g| g != 0.0));
    }
    offsets.push(labels.len());
    let mut results = Vec::new();
    for (gi, rbm) in rbms.iter().enumerate() {
        let sc = cfg.selection_config(gi);
        let rows = stratified_sample(&candidates, &labels, cfg.select_max_rows, derive_seed(sc.forest.seed, 1));
        let per_case: Vec<(usize, Vec<usize>)> = (0..cases.len())
            .map(|c| {
                let local: Vec<usize> =
                    rows.iter().filter(|&&r| r >= offsets[c] && r < offsets[c + 1]).map(|&r| r - offsets[c]).collect();
                (c, local)
            })
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let parts: Vec<(Vec<f32>, Vec<Vec<f32>>)> = per_case
            .par_iter()
            .map(|(c, local)| {
                let case = &cases[*c];
                let grid = &case.maps[0];
                let centers: Vec<[usize; 3]> = local.iter().map(|&i| grid.coords(i)).collect();
                let act = hidden_activations_at(rbm, case, &centers)?;
                let maps = group_maps(case, &rbm.spec.maps)?;
                let cols = maps.iter().map(|m| local.iter().map(|&i| m.data()[i]).collect()).collect();
                Ok((act.into_iter().map(|v| v as f32).collect(), cols))
            })
            .collect::<Result<_>>()?;
        let mut activations = Vec::with_capacity(rows.len() * rbm.n_hidden);
        let mut map_cols = vec![Vec::with_capacity(rows.len()); rbm.spec.maps.len()];
        for (a, cols) in parts {
            activations.extend(a);
            for (dst, src) in map_cols.iter_mut().zip(cols) {
                dst.extend(src);
            }
        }
        let row_labels: Vec<bool> = rows.iter().map(|&r| labels[r]).collect();
        let sel = select_units(&rbm.spec.name, &activations, rbm.n_hidden, &map_cols, &row_labels, &sc)?;
        let path = layout.selection(&rbm.spec.name);
        ensure_parent(&path)?;
        sel.save(&path)?;
        log::info!("selection {}: units {:?}", rbm.spec.name, sel.selected);
        results.push(sel);
    }
    Ok(results)
}

pub fn load_selections(cfg: &PipelineConfig, rbms: &[Rbm]) -> Result<Vec<SelectionResult>> {
    let layout = Layout::new(&cfg.out);
    rbms.iter().map(|r| SelectionResult::load(&layout.selection(&r.spec.name))).collect()
}

/// Channel names in predictor input order.
pub fn channel_names(rbms: &[Rbm], selections: &[SelectionResult]) -> Vec<String> {
    let mut names: Vec<String> = MapKind::PARAMETRIC.iter().map(|k| k.file_stem().to_string()).collect();
    for (r, s) in rbms.iter().zip(selections) {
        names.extend(s.selected.iter().map(|u| format!("{}.u{u}", r.spec.name)));
    }
    names
}

/// Selected feature volumes of one case, in channel order.
pub fn compute_features(rbms: &[Rbm], selections: &[SelectionResult], case: &PreprocessedCase) -> Result<Vec<Volume>> {
    let mut out = Vec::new();
    for (r, s) in rbms.iter().zip(selections) {
        out.extend(generate_feature_volumes(r, case, &s.selected)?.volumes);
    }
    Ok(out)
}

/// Reads cached feature volumes, computing and caching any that are missing.
pub fn cached_features(
    cfg: &PipelineConfig,
    rbms: &[Rbm],
    selections: &[SelectionResult],
    case: &PreprocessedCase,
) -> Result<Vec<Volume>> {
    let layout = Layout::new(&cfg.out);
    let paths: Vec<PathBuf> = rbms
        .iter()
        .zip(selections)
        .flat_map(|(r, s)| s.selected.iter().map(|&u| layout.feature(&case.case_id, &r.spec.name, u)))
        .collect();
    if paths.iter().all(|p| p.exists()) {
        let n = case.maps[0].len();
        return paths
            .iter()
            .map(|p| Volume::new(case.dims(), case.spacing(), MapKind::Feature, read_raw_f32(p, n)?))
            .collect();
    }
    let vols = compute_features(rbms, selections, case)?;
    for (p, v) in paths.iter().zip(&vols) {
        ensure_parent(p)?;
        write_raw_f32(p, v.data())?;
    }
    Ok(vols)
}

pub fn generate_features(
    cfg: &PipelineConfig,
    rbms: &[Rbm],
    selections: &[SelectionResult],
    cases: &[PreprocessedCase],
) -> Result<()> {
    cases.par_iter().try_for_each(|c| cached_features(cfg, rbms, selections, c).map(|_| ()))
}

fn predictor_case(case: &PreprocessedCase, features: Vec<Volume>) -> PredictorCase {
    let mut channels = case.maps.clone();
    channels.extend(features);
    PredictorCase { case_id: case.case_id.clone(), channels, gt: case.gt.clone() }
}

/// Seeded inner split of the training cases for best-epoch selection.
pub fn inner_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Data(format!("training needs at least 2 cases, got {n}")));
    }
    let v = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..v].to_vec();
    let mut train = order[v..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub struct TrainedModel {
    pub network: Network,
    pub checkpoint: PredictorCheckpoint,
    pub history: TrainHistory,
}

pub fn train_model(
    cfg: &PipelineConfig,
    rbms: &[Rbm],
    selections: &[SelectionResult],
    cases: &[PreprocessedCase],
) -> Result<TrainedModel> {
    let layout = Layout::new(&cfg.out);
    let mut pcs = cases
        .par_iter()
        .map(|c| Ok(predictor_case(c, cached_features(cfg, rbms, selections, c)?)))
        .collect::<Result<Vec<_>>>()?;
    let (tr, va) = inner_split(pcs.len(), cfg.validation_fraction, derive_seed(cfg.seed, 0x400))?;
    let refs: Vec<&[Volume]> = tr.iter().map(|&i| pcs[i].channels.as_slice()).collect();
    let norm = ChannelNorm::fit(&refs)?;
    for c in &mut pcs {
        norm.apply(&mut c.channels)?;
    }
    let train: Vec<PredictorCase> = tr.iter().map(|&i| pcs[i].clone()).collect();
    let val: Vec<PredictorCase> = va.iter().map(|&i| pcs[i].clone()).collect();
    let spec = cfg.network_spec();
    let trained = train_predictor(&spec, &train, &val, &cfg.train_config())?;
    let names = channel_names(rbms, selections);
    ensure_parent(&layout.model())?;
    save_predictor(&layout.model(), &spec, &trained.params, &names, &norm)?;
    write_json(&layout.train_history(), &trained.history)?;
    let checkpoint = PredictorCheckpoint {
        header: crate::nn::CheckpointHeader {
            format_version: crate::nn::NET_FORMAT_VERSION,
            spec,
            entries: trained.params.entries.clone(),
            channels: names,
            norm,
        },
        params: trained.params,
    };
    Ok(TrainedModel { network: trained.network, checkpoint, history: trained.history })
}

/// Everything inference needs.
pub struct PredictionArtifacts {
    pub config: PipelineConfig,
    pub rbms: Vec<Rbm>,
    pub selections: Vec<SelectionResult>,
    pub network: Network,
    pub checkpoint: PredictorCheckpoint,
}

pub fn load_artifacts(cfg: &PipelineConfig) -> Result<PredictionArtifacts> {
    let rbms = load_rbms(cfg)?;
    let selections = load_selections(cfg, &rbms)?;
    let (network, checkpoint) = load_predictor(&Layout::new(&cfg.out).model())?;
    if checkpoint.header.channels != channel_names(&rbms, &selections) {
        return Err(Error::Data("predictor channels do not match the RBM selections".into()));
    }
    Ok(PredictionArtifacts { config: cfg.clone(), rbms, selections, network, checkpoint })
}

/// RBM training, feature selection, feature caching and predictor training on the training split.
pub fn run_full_training(cfg: &PipelineConfig) -> Result<PredictionArtifacts> {
    cfg.validate()?;
    echo_config(cfg)?;
    let ds = open_dataset(cfg).map_err(|e| e.at("load"))?;
    let cases = load_preprocessed(&ds, &ds.train, cfg).map_err(|e| e.at("preprocess"))?;
    let rbms: Vec<Rbm> = train_rbms(cfg, &cases).map_err(|e| e.at("train-rbm"))?.into_iter().map(|r| r.0).collect();
    let selections = select_features(cfg, &rbms, &cases).map_err(|e| e.at("select-features"))?;
    generate_features(cfg, &rbms, &selections, &cases).map_err(|e| e.at("gen-features"))?;
    let model = train_model(cfg, &rbms, &selections, &cases).map_err(|e| e.at("train"))?;
    Ok(PredictionArtifacts {
        config: cfg.clone(),
        rbms,
        selections,
        network: model.network,
        checkpoint: model.checkpoint,
    })
}

/// Probability map on the common grid and the binary mask at the case's original geometry.
pub struct CasePrediction {
    pub probability: Volume,
    pub mask: Volume,
}

pub fn predict_preprocessed(art: &PredictionArtifacts, case: &PreprocessedCase) -> Result<CasePrediction> {
    let mut channels = case.maps.clone();
    channels.extend(compute_features(&art.rbms, &art.selections, case)?);
    art.checkpoint.header.norm.apply(&mut channels)?;
    let refs: Vec<&Volume> = channels.iter().collect();
    let probability = predict_volume(&art.network, &art.checkpoint.params, &refs)?;
    let t = art.config.threshold;
    let binary = Volume::new(
        probability.dims(),
        probability.spacing(),
        MapKind::Mask,
        probability.data().iter().map(|&p| (p >= t) as u8 as f32).collect(),
    )?;
    let cleaned = postprocess_mask(&binary, art.config.min_component)?;
    let p = case.provenance;
    let resized = resize_volume(&cleaned, p.original_dims, Interpolation::Nearest)?;
    let mask = Volume::new(p.original_dims, p.original_spacing, MapKind::Mask, resized.into_data())?;
    Ok(CasePrediction { probability, mask })
}

pub fn predict_case(art: &PredictionArtifacts, case: &PatientCase) -> Result<CasePrediction> {
    predict_preprocessed(art, &preprocess_case_to(case, art.config.common_dims)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub case_id: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub probability_dims: [usize; 3],
}

pub fn save_prediction(dir: &Path, case_id: &str, p: &CasePrediction) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_raw_u8(&dir.join("mask.u8"), p.mask.data())?;
    write_raw_f32(&dir.join("probability.f32"), p.probability.data())?;
    let meta = PredictionMeta {
        case_id: case_id.to_string(),
        dims: p.mask.dims(),
        spacing: p.mask.spacing(),
        probability_dims: p.probability.dims(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

pub fn load_prediction_mask(dir: &Path) -> Result<Volume> {
    let meta: PredictionMeta = read_json(&dir.join("meta.json"))?;
    let n = meta.dims.iter().product();
    Volume::new(meta.dims, meta.spacing, MapKind::Mask, read_raw_u8(&dir.join("mask.u8"), n)?)
}

/// Predicts every case of the configured split and writes the masks.
pub fn predict_split(art: &PredictionArtifacts, ds: &Dataset) -> Result<Vec<String>> {
    let layout = Layout::new(&art.config.out);
    let ids = ds.ids(art.config.predict_split);
    for id in &ids {
        let case = ds.load(id)?;
        let p = predict_case(art, &case).map_err(|e| e.at("predict"))?;
        save_prediction(&layout.prediction_dir(id), id, &p)?;
    }
    Ok(ids)
}

/// Scores saved predictions against the dataset ground truth; writes the CSV and a summary.
pub fn evaluate_predictions(cfg: &PipelineConfig, ds: &Dataset, ids: &[String]) -> Result<Vec<MetricsReport>> {
    let layout = Layout::new(&cfg.out);
    let reports = ids
        .par_iter()
        .map(|id| {
            let case = ds.load(id)?;
            let gt = case.gt.ok_or_else(|| Error::Data(format!("case {id} has no ground truth")))?;
            let pred = load_prediction_mask(&layout.prediction_dir(id))?;
            evaluate_case(id, &pred, &gt)
        })
        .collect::<Result<Vec<_>>>()?;
    write_metrics_csv(&layout.metrics_csv(), &reports)?;
    write_atomic(&layout.summary(), format_summary(&summarize(&reports)).as_bytes())?;
    Ok(reports)
}

/// Full training, prediction of the held-out split and evaluation.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<MetricsReport>> {
    let art = run_full_training(cfg)?;
    let ds = open_dataset(cfg).map_err(|e| e.at("load"))?;
    let ids = predict_split(&art, &ds)?;
    evaluate_predictions(cfg, &ds, &ids).map_err(|e| e.at("evaluate"))
}

/// Writes a synthetic dataset to `cfg.dataset`.
pub fn synthesize(cfg: &PipelineConfig) -> Result<Manifest> {
    generate_dataset(&cfg.synthetic_spec(), &cfg.dataset).map_err(|e| e.at("synth"))
}
