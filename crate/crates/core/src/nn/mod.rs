//! SRCNN-style fully convolutional super-resolution: model, training,
//! tiled inference and checkpoints.

pub mod arch;
pub mod checkpoint;
pub mod infer;
mod kernel;
pub mod model;
pub mod tensor;
pub mod train;

pub use arch::{ArchConfig, ConvSpec, DEFAULT_SLOPE, PRESETS};
pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use infer::{infer_tiled, infer_tiled_with, TileSpec, DEFAULT_TILE, MIN_OVERLAP};
pub use model::{ConvLayer, ForwardCache, ParamGrads, SrcnnModel, TrainMeta};
pub use tensor::Tensor;
pub use train::{
    masked_mse_grad, save_loss_log, train, train_from, write_loss_log, Adam, LossRecord, Role, SplitSpec, TrainConfig,
    TrainOutcome, TrainPair,
};
