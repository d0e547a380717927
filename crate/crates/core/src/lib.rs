//! Event-camera pose estimation at desk scale.
//!
//! Raw event streams are cut into 100 ms windows and binarized into
//! two-channel frames; a small direct end-to-end network regresses the 6D
//! pose of the observed target from sequences of ten such frames. The
//! network comes in formal (ReLU) and spiking (parametric LIF) flavors, with
//! or without batchnorm, and batchnorm can be folded into the convolutions
//! for inference.
//!
//! - [`events`]: event stream formats and the uniform noise model
//! - [`framebuild`]: windowing, binarization, pose labelling, frame archives
//! - [`numcore`]: the differentiable tensor engine
//! - [`model`]: the network, its variants, BN folding and checkpoints
//! - [`dataset`]: sequence splits, K-fold plans, augmentation, synthetic scenes
//! - [`trainer`]: loss, metrics, training, evaluation and K-fold reports
//! - [`cli`]: the `spikepose` command line

pub mod cli;
pub mod dataset;
pub mod events;
pub mod framebuild;
pub mod kv;
pub mod model;
pub mod numcore;
pub mod pose;
pub mod trainer;

pub use pose::{Pose6D, TimedPose};
