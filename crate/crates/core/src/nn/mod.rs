//! Supervised lesion predictor: layers, recurrent blocks, loss, optimizer and training loop.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod network;
mod params;
mod tensor;
mod train;

pub use layers::{
    concat_channels, conv2d, conv2d_backward, conv_block, maxpool2, maxpool2_backward, partition2d,
    relu_backward_in_place, relu_in_place, sigmoid_backward, sigmoid_tensor, split_channels, unpartition2d,
    upsample2, upsample2_backward, PARTITION_ORDER,
};
pub use loss::{batch_soft_dice, soft_dice_loss, LossValue, DICE_EPS};
pub use lstm::{bilstm_axis, bilstm_axis_backward, lstm_cell_step, Axis, BiLstmCache, LstmGrads, LstmWeights};
pub use network::{ForwardCache, Network, NetworkSpec};
pub use params::{adam_step, grad_slice, AdamConfig, AdamState, ParamEntry, ParamId, Parameters};
pub use checkpoint::{
    load_predictor, save_predictor, ChannelNorm, CheckpointHeader, PredictorCheckpoint, NET_FORMAT_VERSION,
};
pub use tensor::Tensor;
pub use train::{
    extract_training_patch, predict_volume, sample_patch_refs, split_counts, train_predictor, EpochRecord, PatchRef,
    PredictorCase, TrainConfig, TrainHistory, TrainedPredictor, VALIDATION_FRACTION,
};
