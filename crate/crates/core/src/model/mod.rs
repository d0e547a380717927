//! The pose network, its six compared variants, batchnorm folding and
//! checkpoints.

mod checkpoint;
mod config;
mod fused;
mod network;

use thiserror::Error;

use crate::kv::KvError;
use crate::numcore::NumError;

pub use checkpoint::{config_path, load_checkpoint, save_checkpoint, save_fused, LoadedModel, SequencePredictor};
pub use config::{Activation, ChannelPlan, ConvSpec, S2E2Config, SchedulerChoice, Variant, PARAM_BUDGET};
pub use fused::{fuse_bn, FusedBlock, FusedConv, FusedModel, FusedNeuron};
pub use network::{BatchNormLayer, ConvBlock, ConvLayer, ForwardHook, ForwardOutput, Neuron, NoHook, S2E2Model};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{count} trainable parameters, outside the budget {lo}..={hi}")]
    ParamBudget { count: usize, lo: usize, hi: usize },
    #[error("batchnorm folding needs a model in eval mode")]
    TrainMode,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("model config file: {0}")]
    Kv(#[from] KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
