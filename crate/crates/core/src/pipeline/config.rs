//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, TrainConfig, VALIDATION_FRACTION};
use crate::rbm::{RbmGroupSpec, RbmTrainConfig, PATCH_2D, PATCH_3D};
use crate::selection::{ForestConfig, GroupAggregate, SelectionConfig, DEFAULT_BINS, DEFAULT_MAX_ROWS, DEFAULT_SELECTED};
use crate::synth::SyntheticSpec;
use crate::volume::{Dims, MapKind, COMMON_DIMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grouping {
    None,
    Single,
    LesionOnly,
    HaemoOnly,
    Dual,
    Mixed,
    ThreeRbm,
}

impl Grouping {
    pub const ALL: [Grouping; 7] = [
        Grouping::None,
        Grouping::Single,
        Grouping::LesionOnly,
        Grouping::HaemoOnly,
        Grouping::Dual,
        Grouping::Mixed,
        Grouping::ThreeRbm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Grouping::None => "none",
            Grouping::Single => "single",
            Grouping::LesionOnly => "lesion_only",
            Grouping::HaemoOnly => "haemo_only",
            Grouping::Dual => "dual",
            Grouping::Mixed => "mixed",
            Grouping::ThreeRbm => "three_rbm",
        }
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grouping::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown grouping {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchMode {
    TwoD,
    ThreeD,
}

impl PatchMode {
    pub fn shape(self) -> Dims {
        match self {
            PatchMode::TwoD => PATCH_2D,
            PatchMode::ThreeD => PATCH_3D,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PatchMode::TwoD => "2d",
            PatchMode::ThreeD => "3d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictSplit {
    Test,
    Train,
    All,
}

impl PredictSplit {
    fn name(self) -> &'static str {
        match self {
            PredictSplit::Test => "test",
            PredictSplit::Train => "train",
            PredictSplit::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub grouping: Grouping,
    pub features_per_rbm: usize,
    pub recurrent: bool,
    pub rbm_patch_mode: PatchMode,
    /// Grid every case is resized to.
    pub common_dims: Dims,
    /// Held-out share when the dataset has no manifest.
    pub test_fraction: f64,

    pub rbm_hidden: usize,
    pub rbm_lr: f64,
    pub rbm_momentum: f64,
    pub rbm_batch: usize,
    pub rbm_epochs: usize,
    pub rbm_patience: usize,
    pub rbm_patches_per_case: usize,

    pub nmi_bins: usize,
    pub nmi_aggregate: GroupAggregate,
    pub select_max_rows: usize,
    pub rf_trees: usize,
    pub rf_max_depth: usize,

    pub net_widths: Vec<usize>,
    pub net_blocks: Vec<usize>,
    pub net_recurrent_hidden: Vec<usize>,

    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub patch_size: usize,
    pub patches_per_subject: usize,
    pub augment: bool,
    /// 0 disables early stopping.
    pub patience: usize,
    pub validation_fraction: f64,

    pub threshold: f32,
    pub min_component: usize,
    pub predict_split: PredictSplit,

    pub synth_cases: usize,
    pub synth_dims: Dims,
    pub synth_success_probability: f64,
    pub synth_noise_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let rbm = RbmTrainConfig::default();
        let net = NetworkSpec::default();
        let train = TrainConfig::default();
        let forest = ForestConfig::default();
        let synth = SyntheticSpec::default();
        PipelineConfig {
            dataset: PathBuf::from("data"),
            out: PathBuf::from("out"),
            seed: 0,
            grouping: Grouping::Dual,
            features_per_rbm: DEFAULT_SELECTED,
            recurrent: true,
            rbm_patch_mode: PatchMode::ThreeD,
            common_dims: COMMON_DIMS,
            test_fraction: synth.validation_fraction,
            rbm_hidden: rbm.n_hidden,
            rbm_lr: rbm.learning_rate,
            rbm_momentum: rbm.momentum,
            rbm_batch: rbm.batch_size,
            rbm_epochs: rbm.epochs,
            rbm_patience: rbm.patience,
            rbm_patches_per_case: 2000,
            nmi_bins: DEFAULT_BINS,
            nmi_aggregate: GroupAggregate::Max,
            select_max_rows: DEFAULT_MAX_ROWS,
            rf_trees: forest.n_trees,
            rf_max_depth: forest.max_depth,
            net_widths: net.widths,
            net_blocks: net.blocks,
            net_recurrent_hidden: net.recurrent_hidden,
            epochs: train.epochs,
            lr: train.lr,
            batch: train.batch_size,
            patch_size: train.patch_size,
            patches_per_subject: train.patches_per_subject,
            augment: train.augment,
            patience: 0,
            validation_fraction: VALIDATION_FRACTION,
            threshold: 0.5,
            min_component: 250,
            predict_split: PredictSplit::Test,
            synth_cases: synth.n_cases,
            synth_dims: synth.dims,
            synth_success_probability: synth.success_probability,
            synth_noise_sigma: synth.noise_sigma,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_dims(key: &str, value: &str) -> Result<Dims> {
    let v = parse_list(key, value)?;
    <[usize; 3]>::try_from(v).map_err(|_| Error::Config(format!("{key}: expected three comma-separated sizes")))
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "grouping" => self.grouping = v.parse()?,
            "features_per_rbm" => self.features_per_rbm = parse(key, v)?,
            "recurrent" => self.recurrent = parse_bool(key, v)?,
            "rbm_patch_mode" => {
                self.rbm_patch_mode = match v.to_ascii_lowercase().as_str() {
                    "2d" => PatchMode::TwoD,
                    "3d" => PatchMode::ThreeD,
                    _ => return Err(Error::Config(format!("rbm_patch_mode: expected 2d or 3d, got {v:?}"))),
                }
            }
            "common_dims" => self.common_dims = parse_dims(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "rbm_hidden" => self.rbm_hidden = parse(key, v)?,
            "rbm_lr" => self.rbm_lr = parse(key, v)?,
            "rbm_momentum" => self.rbm_momentum = parse(key, v)?,
            "rbm_batch" => self.rbm_batch = parse(key, v)?,
            "rbm_epochs" => self.rbm_epochs = parse(key, v)?,
            "rbm_patience" => self.rbm_patience = parse(key, v)?,
            "rbm_patches_per_case" => self.rbm_patches_per_case = parse(key, v)?,
            "nmi_bins" => self.nmi_bins = parse(key, v)?,
            "nmi_aggregate" => {
                self.nmi_aggregate = match v {
                    "max" => GroupAggregate::Max,
                    "mean" => GroupAggregate::Mean,
                    _ => return Err(Error::Config(format!("nmi_aggregate: expected max or mean, got {v:?}"))),
                }
            }
            "select_max_rows" => self.select_max_rows = parse(key, v)?,
            "rf_trees" => self.rf_trees = parse(key, v)?,
            "rf_max_depth" => self.rf_max_depth = parse(key, v)?,
            "net_widths" => self.net_widths = parse_list(key, v)?,
            "net_blocks" => self.net_blocks = parse_list(key, v)?,
            "net_recurrent_hidden" => self.net_recurrent_hidden = parse_list(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "patch_size" => self.patch_size = parse(key, v)?,
            "patches_per_subject" => self.patches_per_subject = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "validation_fraction" => self.validation_fraction = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "min_component" => self.min_component = parse(key, v)?,
            "predict_split" => {
                self.predict_split = match v {
                    "test" => PredictSplit::Test,
                    "train" => PredictSplit::Train,
                    "all" => PredictSplit::All,
                    _ => return Err(Error::Config(format!("predict_split: expected test, train or all, got {v:?}"))),
                }
            }
            "synth_cases" => self.synth_cases = parse(key, v)?,
            "synth_dims" => self.synth_dims = parse_dims(key, v)?,
            "synth_success_probability" => self.synth_success_probability = parse(key, v)?,
            "synth_noise_sigma" => self.synth_noise_sigma = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Fully resolved configuration; parsing it back yields an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dataset", self.dataset.display().to_string());
        kv("out", self.out.display().to_string());
        kv("seed", self.seed.to_string());
        kv("grouping", self.grouping.name().into());
        kv("features_per_rbm", self.features_per_rbm.to_string());
        kv("recurrent", self.recurrent.to_string());
        kv("rbm_patch_mode", self.rbm_patch_mode.name().into());
        kv("common_dims", list(&self.common_dims));
        kv("test_fraction", format!("{:?}", self.test_fraction));
        kv("rbm_hidden", self.rbm_hidden.to_string());
        kv("rbm_lr", format!("{:?}", self.rbm_lr));
        kv("rbm_momentum", format!("{:?}", self.rbm_momentum));
        kv("rbm_batch", self.rbm_batch.to_string());
        kv("rbm_epochs", self.rbm_epochs.to_string());
        kv("rbm_patience", self.rbm_patience.to_string());
        kv("rbm_patches_per_case", self.rbm_patches_per_case.to_string());
        kv("nmi_bins", self.nmi_bins.to_string());
        kv("nmi_aggregate", if self.nmi_aggregate == GroupAggregate::Max { "max" } else { "mean" }.into());
        kv("select_max_rows", self.select_max_rows.to_string());
        kv("rf_trees", self.rf_trees.to_string());
        kv("rf_max_depth", self.rf_max_depth.to_string());
        kv("net_widths", list(&self.net_widths));
        kv("net_blocks", list(&self.net_blocks));
        kv("net_recurrent_hidden", list(&self.net_recurrent_hidden));
        kv("epochs", self.epochs.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("batch", self.batch.to_string());
        kv("patch_size", self.patch_size.to_string());
        kv("patches_per_subject", self.patches_per_subject.to_string());
        kv("augment", self.augment.to_string());
        kv("patience", self.patience.to_string());
        kv("validation_fraction", format!("{:?}", self.validation_fraction));
        kv("threshold", format!("{:?}", self.threshold));
        kv("min_component", self.min_component.to_string());
        kv("predict_split", self.predict_split.name().into());
        kv("synth_cases", self.synth_cases.to_string());
        kv("synth_dims", list(&self.synth_dims));
        kv("synth_success_probability", format!("{:?}", self.synth_success_probability));
        kv("synth_noise_sigma", format!("{:?}", self.synth_noise_sigma));
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.features_per_rbm == 0 {
            return bad("features_per_rbm must be at least 1".into());
        }
        if self.grouping != Grouping::None && self.features_per_rbm > self.rbm_hidden {
            return bad(format!("features_per_rbm {} exceeds rbm_hidden {}", self.features_per_rbm, self.rbm_hidden));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) || !(0.0..1.0).contains(&self.test_fraction) {
            return bad("validation_fraction and test_fraction must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]".into());
        }
        if self.common_dims.iter().any(|&d| d == 0) {
            return bad("common_dims must be positive".into());
        }
        let spec = self.network_spec();
        spec.validate()?;
        let m = spec.spatial_multiple();
        if self.common_dims[0] % m != 0 || self.common_dims[1] % m != 0 {
            return bad(format!("common_dims in-plane sizes must be multiples of {m}"));
        }
        if self.patch_size % m != 0 || self.patch_size == 0 {
            return bad(format!("patch_size must be a positive multiple of {m}"));
        }
        if self.batch == 0 || self.rbm_batch == 0 || self.patches_per_subject == 0 {
            return bad("batch sizes and patches_per_subject must be positive".into());
        }
        Ok(())
    }

    /// One machine per group, in channel order.
    pub fn rbm_groups(&self) -> Result<Vec<RbmGroupSpec>> {
        let shape = self.rbm_patch_mode.shape();
        use MapKind::*;
        Ok(match self.grouping {
            Grouping::None => vec![],
            Grouping::Single => vec![RbmGroupSpec::single(shape)],
            Grouping::LesionOnly => vec![RbmGroupSpec::lesion(shape)],
            Grouping::HaemoOnly => vec![RbmGroupSpec::haemo(shape)],
            Grouping::Dual => vec![RbmGroupSpec::lesion(shape), RbmGroupSpec::haemo(shape)],
            Grouping::Mixed => {
                let mut rest = vec![Mtt, Ttp, Tmax, Rcbv, Rcbf];
                rest.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x6d69_7864));
                let mut a = vec![Adc];
                a.extend_from_slice(&rest[..3]);
                let mut b = vec![Adc];
                b.extend_from_slice(&rest[3..]);
                vec![RbmGroupSpec::new("mixed_a", a, shape)?, RbmGroupSpec::new("mixed_b", b, shape)?]
            }
            Grouping::ThreeRbm => vec![
                RbmGroupSpec::new("haemo_less", vec![Rcbv, Rcbf], shape)?,
                RbmGroupSpec::new("lesion_less", vec![Mtt, Ttp, Tmax], shape)?,
                RbmGroupSpec::new("adc", vec![Adc], shape)?,
            ],
        })
    }

    /// Six maps plus `features_per_rbm` channels per machine.
    pub fn input_channels(&self) -> Result<usize> {
        Ok(MapKind::PARAMETRIC.len() + self.rbm_groups()?.len() * self.features_per_rbm)
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            in_channels: self.input_channels().unwrap_or(MapKind::PARAMETRIC.len()),
            widths: self.net_widths.clone(),
            blocks: self.net_blocks.clone(),
            recurrent_hidden: self.net_recurrent_hidden.clone(),
            recurrent: self.recurrent,
        }
    }

    pub fn rbm_train_config(&self, group_index: usize) -> RbmTrainConfig {
        RbmTrainConfig {
            n_hidden: self.rbm_hidden,
            learning_rate: self.rbm_lr,
            momentum: self.rbm_momentum,
            batch_size: self.rbm_batch,
            epochs: self.rbm_epochs,
            patience: self.rbm_patience,
            seed: derive_seed(self.seed, 0x100 + group_index as u64),
            ..RbmTrainConfig::default()
        }
    }

    pub fn selection_config(&self, group_index: usize) -> SelectionConfig {
        SelectionConfig {
            bins: self.nmi_bins,
            aggregate: self.nmi_aggregate,
            n_selected: self.features_per_rbm,
            forest: ForestConfig {
                n_trees: self.rf_trees,
                max_depth: self.rf_max_depth,
                seed: derive_seed(self.seed, 0x200 + group_index as u64),
                ..ForestConfig::default()
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            patch_size: self.patch_size,
            patches_per_subject: self.patches_per_subject,
            batch_size: self.batch,
            lr: self.lr,
            epochs: self.epochs,
            augment: self.augment,
            lesion_fraction: 0.5,
            patience: (self.patience > 0).then_some(self.patience),
            seed: derive_seed(self.seed, 0x300),
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            dims: self.synth_dims,
            n_cases: self.synth_cases,
            success_probability: self.synth_success_probability,
            noise_sigma: self.synth_noise_sigma,
            validation_fraction: self.test_fraction,
            seed: self.seed,
            ..SyntheticSpec::default()
        }
    }
}

/// Independent stream seed for one pipeline stage.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
