//! Sequence-aware splits, K-fold plans, augmentation and a synthetic
//! labeled event generator.

mod augment;
mod split;
mod synth;

use thiserror::Error;

pub use augment::{augment, AugmentConfig, Augmented};
pub use split::{
    chunk_sequences, kfold_plans, kfold_plans_with_len, parse_plans_csv, split_sequences, write_plans_csv, FoldPlan,
    SplitPlan, DEFAULT_K, DEFAULT_REPEATS, SEQ_LEN,
};
pub use synth::{synth_frames, synth_generate, synth_sequences, SyntheticScene, SyntheticSceneConfig, Trajectory};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{n_frames} frames cannot fill one sequence of {seq_len}")]
    TooFewFrames { n_frames: usize, seq_len: usize },
    #[error("{chunks} chunks cannot be split into {k} folds")]
    TooFewChunks { chunks: usize, k: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("plan CSV line {line}: {detail}")]
    PlanCsv { line: usize, detail: String },
    #[error("frames in a sequence differ in size")]
    FrameSize,
    #[error("trajectory leaves the field of view at t = {t_ms} ms")]
    OutOfView { t_ms: u64 },
    #[error("scene config: {0}")]
    Kv(#[from] crate::kv::KvError),
    #[error(transparent)]
    Events(#[from] crate::events::EventError),
    #[error(transparent)]
    Frames(#[from] crate::framebuild::FrameError),
}
