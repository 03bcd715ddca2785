//! Convolutional encoder-decoder built from scratch on `f64` NHWC tensors.

pub mod gradcheck;
mod io;
mod layers;
mod net;
mod spec;
mod train;

pub use io::{read_weights, write_weights, MANIFEST_FILE, WEIGHTS_FILE};
pub use layers::*;
pub use net::{backward, forward, log_loss, predict, select, update_running_stats, ForwardCache, Mode, ParamSet, Weights, PROB_CLAMP};
pub use spec::{build_segnet, LayerReport, NetworkSpec, NodeSpec, Op, ParameterReport, SegnetParams};
pub use train::{
    cube_data, cube_index, default_main_channels, train, write_history, ChannelStats, EarlyStopping, EpochAction, EpochRecord, NnData,
    NnOptimizer, StopReason, TrainOutcome, TrainerConfig, DEFAULT_LATE_CHANNELS,
};
