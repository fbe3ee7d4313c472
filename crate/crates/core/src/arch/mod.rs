//! The 5-layer U-Net with stacked KPConv blocks, its training loop,
//! full-scene inference and checkpoints.

mod checkpoint;
mod config;
mod gradcheck;
mod network;
mod predict;
mod pyramid;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, Record, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::NetworkConfig;
pub use gradcheck::{gradient_suite, micro_config, LayerCheck, FD_EPSILON};
pub use network::{
    upsample_backward, upsample_nearest, ForwardCache, Gradients, Network, RunningStats,
};
pub use predict::{default_tile_stride, predict_cloud, predict_probabilities};
pub use pyramid::{build_batch, build_pyramid, input_features, MultiscaleBatch};
pub use train::{
    argmax_rows, batch_accuracy, train, BatchSampler, OptimConfig, StepReport, TrainOptions,
    MAX_SPHERE_RETRIES,
};
