//! A small reverse-mode tensor engine: NCHW convolution, batchnorm, ReLU,
//! parametric LIF neurons with a surrogate gradient, Adam and per-epoch
//! learning-rate schedules.

pub mod archive;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod schedule;
pub mod tape;
pub mod tensor;

use thiserror::Error;

pub use archive::TensorArchive;
pub use optim::{Adam, Param, ParamGrads, ParamId, ParamStore};
pub use schedule::{lr_at, LrSchedule, ScheduleKind};
pub use tape::{ArcTanSurrogate, BatchStats, BnMode, Gradients, SpikeForward, Tape, Var};
pub use tensor::{Scalar, Tensor};

/// Firing threshold of every spiking neuron.
pub const PLIF_THRESHOLD: f64 = 1.0;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFinite { name: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("weights archive: {0}")]
    Archive(String),
}

impl NumError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        NumError::Shape { op, detail }
    }
}
