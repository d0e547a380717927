//! Loss, pose metrics, the training loop, evaluation and K-fold reports.

mod metrics;
mod report;
mod train;

use thiserror::Error;

pub use metrics::{loss, position_error, rotation_error, rotation_error_literal, Metrics};
pub use report::{aggregate, kfold_report, FoldOutcome, RunReport, Stat, REPORT_HEADER};
pub use train::{
    evaluate, evaluate_predictions, sequence_inputs, train_run, EpochLog, TrainConfig, TrainOutcome, EPOCH_LOG_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Num(#[from] crate::numcore::NumError),
}
