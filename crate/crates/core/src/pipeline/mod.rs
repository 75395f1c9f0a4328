//! End-to-end orchestration: configuration, stages, post-processing and artifacts.

mod config;
mod postprocess;
mod run;

pub use config::{derive_seed, Grouping, PatchMode, PipelineConfig, PredictSplit};
pub use postprocess::{connected_components_26, postprocess_mask, MIN_COMPONENT_VOXELS};
pub use run::{
    cached_features, channel_names, compute_features, echo_config, evaluate_predictions, generate_features,
    inner_split, load_artifacts, load_prediction_mask, load_preprocessed, load_rbms, load_selections, open_dataset,
    predict_case, predict_preprocessed, predict_split, run_all, run_full_training, save_prediction, select_features,
    synthesize, train_model, train_rbms, CasePrediction, Dataset, Layout, PredictionArtifacts, PredictionMeta,
    TrainedModel,
};
