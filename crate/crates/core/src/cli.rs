//! Command-line entry point.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::metrics::{format_summary, summarize};
use crate::pipeline::{
    echo_config, evaluate_predictions, generate_features, load_artifacts, load_preprocessed, load_rbms,
    load_selections, open_dataset, predict_split, run_all, select_features, synthesize, train_model, train_rbms,
    PipelineConfig,
};

#[derive(Debug, Parser)]
#[command(name = "strokepred", version, about = "Final stroke lesion prediction pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Runs on a single thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Writes a synthetic dataset to `dataset`.
    Synth,
    /// Trains the RBMs of the configured grouping.
    TrainRbm,
    /// Scores hidden units and keeps `features_per_rbm` per machine.
    SelectFeatures,
    /// Caches the selected feature volumes of every case.
    GenFeatures,
    /// Trains the predictor.
    Train,
    /// Predicts the cases of `predict_split`.
    Predict,
    /// Scores saved predictions against ground truth.
    Evaluate,
    /// Every training stage, then prediction and evaluation of the held-out split.
    RunAll,
}

/// Resolves the configuration from file, overrides and flags.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command, cfg: &PipelineConfig) -> Result<()> {
    if command != Command::RunAll {
        echo_config(cfg)?;
    }
    match command {
        Command::Synth => {
            let m = synthesize(cfg)?;
            println!("wrote {} cases to {}", m.cases.len(), cfg.dataset.display());
        }
        Command::TrainRbm => {
            let ds = open_dataset(cfg)?;
            let cases = load_preprocessed(&ds, &ds.train, cfg).map_err(|e| e.at("preprocess"))?;
            train_rbms(cfg, &cases).map_err(|e| e.at("train-rbm"))?;
        }
        Command::SelectFeatures => {
            let ds = open_dataset(cfg)?;
            let cases = load_preprocessed(&ds, &ds.train, cfg).map_err(|e| e.at("preprocess"))?;
            let rbms = load_rbms(cfg).map_err(|e| e.at("select-features"))?;
            select_features(cfg, &rbms, &cases).map_err(|e| e.at("select-features"))?;
        }
        Command::GenFeatures => {
            let ds = open_dataset(cfg)?;
            let ids = ds.ids(crate::pipeline::PredictSplit::All);
            let cases = load_preprocessed(&ds, &ids, cfg).map_err(|e| e.at("preprocess"))?;
            let rbms = load_rbms(cfg).map_err(|e| e.at("gen-features"))?;
            let sels = load_selections(cfg, &rbms).map_err(|e| e.at("gen-features"))?;
            generate_features(cfg, &rbms, &sels, &cases).map_err(|e| e.at("gen-features"))?;
        }
        Command::Train => {
            let ds = open_dataset(cfg)?;
            let cases = load_preprocessed(&ds, &ds.train, cfg).map_err(|e| e.at("preprocess"))?;
            let rbms = load_rbms(cfg).map_err(|e| e.at("train"))?;
            let sels = load_selections(cfg, &rbms).map_err(|e| e.at("train"))?;
            let m = train_model(cfg, &rbms, &sels, &cases).map_err(|e| e.at("train"))?;
            println!("best epoch {} validation loss {:.4}", m.history.best_epoch, m.history.best_validation_loss);
        }
        Command::Predict => {
            let art = load_artifacts(cfg).map_err(|e| e.at("predict"))?;
            let ds = open_dataset(cfg)?;
            let ids = predict_split(&art, &ds)?;
            println!("predicted {} cases", ids.len());
        }
        Command::Evaluate => {
            let ds = open_dataset(cfg)?;
            let ids = ds.ids(cfg.predict_split);
            let reports = evaluate_predictions(cfg, &ds, &ids).map_err(|e| e.at("evaluate"))?;
            print!("{}", format_summary(&summarize(&reports)));
        }
        Command::RunAll => {
            let reports = run_all(cfg)?;
            print!("{}", format_summary(&summarize(&reports)));
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command; returns the exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    if cli.deterministic {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let result = resolve_config(&cli).and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !matches!(s.downcast_ref::<Error>(), Some(Error::Stage { .. })) {
                    eprintln!("  caused by: {s}");
                }
                src = s.source();
            }
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    dispatch(std::env::args_os())
}
