use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{augment, chunk_sequences, AugmentConfig, SEQ_LEN};
use crate::framebuild::{BinaryFrame, LabeledFrame};
use crate::model::{S2E2Config, S2E2Model, SequencePredictor};
use crate::numcore::{Adam, LrSchedule, NumError, Tape, Tensor};
use crate::pose::Pose6D;

use super::{Metrics, TrainError};

pub const EPOCH_LOG_HEADER: &str = "epoch,lr,train_loss,Et,Er";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: S2E2Config,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Carries the base learning rate.
    pub schedule: LrSchedule,
    pub seq_len: usize,
    pub augment: Option<AugmentConfig>,
    /// Seeds model initialization, chunk shuffling and augmentation.
    pub seed: u64,
}

impl TrainConfig {
    /// Batch 100, 100 epochs, base rate 1e-3 with the variant's scheduler.
    pub fn new(model: S2E2Config) -> Self {
        Self {
            model,
            batch_size: 100,
            epochs: 100,
            schedule: model.scheduler.schedule(),
            seq_len: SEQ_LEN,
            augment: Some(AugmentConfig::default()),
            seed: 0,
        }
    }

    pub fn base_lr(&self) -> f64 {
        self.schedule.base_lr
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.epochs == 0 || self.seq_len == 0 {
            return Err(TrainError::Invalid(format!(
                "batch_size {}, epochs {}, seq_len {} must be positive",
                self.batch_size, self.epochs, self.seq_len
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-frame loss over the epoch.
    pub train_loss: f64,
    /// Errors of the training-mode predictions made during the epoch.
    pub et: f64,
    pub er: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{:e},{},{},{}", self.epoch, self.lr, self.train_loss, self.et, self.er)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// In eval mode.
    pub model: S2E2Model<f32>,
    pub log: Vec<EpochLog>,
    pub test: Metrics,
}

/// Stacks `B` sequences into per-step `B x 2 x H x W` inputs and `B x 6`
/// targets.
pub fn sequence_inputs(
    frames: &[&BinaryFrame],
    poses: &[Pose6D],
    batch: usize,
) -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>), TrainError> {
    if batch == 0 || frames.len() % batch != 0 || poses.len() != frames.len() {
        return Err(TrainError::Invalid("ragged sequence batch".into()));
    }
    let steps = frames.len() / batch;
    let (w, h) = (frames[0].width(), frames[0].height());
    let plane = 2 * w * h;
    let mut inputs = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut x = vec![0.0f32; batch * plane];
        let mut y = Vec::with_capacity(batch * 6);
        for b in 0..batch {
            let f = frames[b * steps + t];
            if f.width() != w || f.height() != h {
                return Err(TrainError::Invalid("frames differ in size".into()));
            }
            f.write_dense(&mut x[b * plane..(b + 1) * plane]);
            y.extend(poses[b * steps + t].to_array().map(|v| v as f32));
        }
        inputs.push(Tensor::from_vec(&[batch, 2, h, w], x)?);
        targets.push(Tensor::from_vec(&[batch, 6], y)?);
    }
    Ok((inputs, targets))
}

fn row_pose(t: &Tensor<f32>, row: usize) -> Pose6D {
    let r = &t.data()[row * 6..row * 6 + 6];
    Pose6D::from_array(r.iter().map(|&v| f64::from(v)).collect::<Vec<_>>().try_into().expect("six values"))
}

/// Full backpropagation through each sequence; one Adam step per batch on
/// the mean per-frame loss; the schedule advances once per epoch.
pub fn train_run(
    frames: &[LabeledFrame],
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut sequences = chunk_sequences(train, cfg.seq_len)?;
    if sequences.is_empty() {
        return Err(TrainError::Invalid("no training sequences".into()));
    }
    if let Some(&i) = train.iter().chain(test).find(|&&i| i >= frames.len()) {
        return Err(TrainError::Invalid(format!("frame index {i} out of range")));
    }
    let mut model = S2E2Model::<f32>::build(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut log = Vec::with_capacity(cfg.epochs);
    model.set_training(true);

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        sequences.shuffle(&mut rng);
        let (mut loss_sum, mut n_frames) = (0.0, 0usize);
        let (mut pe, mut re) = (Vec::new(), Vec::new());
        for (batch_no, batch) in sequences.chunks(cfg.batch_size).enumerate() {
            let mut owned = Vec::with_capacity(batch.len() * cfg.seq_len);
            let mut poses = Vec::with_capacity(owned.capacity());
            for seq in batch {
                let raw: Vec<BinaryFrame> = seq.iter().map(|&i| frames[i].frame.clone()).collect();
                let aug_seed: u64 = rng.random();
                owned.extend(match &cfg.augment {
                    Some(a) => augment(&raw, a, aug_seed)?.frames,
                    None => raw,
                });
                poses.extend(seq.iter().map(|&i| frames[i].pose));
            }
            let refs: Vec<&BinaryFrame> = owned.iter().collect();
            let (inputs, targets) = sequence_inputs(&refs, &poses, batch.len())?;

            let mut tape = Tape::new();
            let out = model.forward_sequence(&mut tape, &inputs)?;
            let losses = out
                .poses
                .iter()
                .zip(&targets)
                .map(|(&p, t)| tape.pose_loss_sum(p, t.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            let total = tape.sum(&losses)?;
            let frames_in_batch = batch.len() * cfg.seq_len;
            let mean = tape.scale(total, 1.0 / frames_in_batch as f32);
            let value = f64::from(tape.value(mean).data()[0]);
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: batch_no });
            }
            loss_sum += value * frames_in_batch as f64;
            n_frames += frames_in_batch;
            for (t, &p) in out.poses.iter().enumerate() {
                let pred = tape.value(p);
                for b in 0..batch.len() {
                    let gt = &poses[b * cfg.seq_len + t];
                    let pr = row_pose(pred, b);
                    pe.push(super::position_error(&pr, gt));
                    re.push(super::rotation_error(&pr, gt));
                }
            }
            let mut grads = tape.backward(mean)?;
            let pg = model.param_grads(&mut grads, &out.params);
            match adam.step(model.params_mut(), &pg, lr) {
                Err(NumError::NonFinite { .. }) => return Err(TrainError::Diverged { epoch, batch: batch_no }),
                other => other?,
            }
        }
        let m = Metrics::from_errors(pe, re);
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / n_frames as f64,
            et: m.mean_position_error_m,
            er: m.mean_rotation_error_deg,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    model.set_training(false);
    let test = evaluate(&model, frames, test, cfg.seq_len)?;
    Ok(TrainOutcome { model, log, test })
}

const EVAL_BATCH: usize = 16;

/// Errors over every frame in `indices`, which must be aligned sequences.
/// Each sequence starts from a reset state.
pub fn evaluate(
    model: &dyn SequencePredictor<f32>,
    frames: &[LabeledFrame],
    indices: &[usize],
    seq_len: usize,
) -> Result<Metrics, TrainError> {
    let sequences = chunk_sequences(indices, seq_len)?;
    let mut preds = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for batch in sequences.chunks(EVAL_BATCH) {
        let refs: Vec<&BinaryFrame> = batch.iter().flatten().map(|&i| &frames[i].frame).collect();
        let poses: Vec<Pose6D> = batch.iter().flatten().map(|&i| frames[i].pose).collect();
        let (inputs, _) = sequence_inputs(&refs, &poses, batch.len())?;
        let out = model.predict(&inputs)?;
        for b in 0..batch.len() {
            for (t, step) in out.iter().enumerate() {
                preds.push(row_pose(step, b));
                labels.push(poses[b * seq_len + t]);
            }
        }
    }
    Ok(Metrics::from_pairs(preds.iter().zip(&labels)))
}

/// Metrics of externally produced predictions, one per frame.
pub fn evaluate_predictions(preds: &[Pose6D], frames: &[LabeledFrame]) -> Result<Metrics, TrainError> {
    if preds.len() != frames.len() {
        return Err(TrainError::Invalid(format!(
            "{} predictions for {} frames",
            preds.len(),
            frames.len()
        )));
    }
    Ok(Metrics::from_pairs(preds.iter().zip(frames.iter().map(|f| &f.pose))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_sequences, SyntheticSceneConfig};
    use crate::model::Variant;
    use crate::numcore::lr_at;

    fn tiny() -> (Vec<LabeledFrame>, TrainConfig) {
        let mut scene = SyntheticSceneConfig::desk(0);
        scene.geometry.width = 32;
        scene.geometry.height = 32;
        scene.focal_px = 30.0;
        let archive = synth_sequences(&scene, 4, 1).unwrap();
        let mut cfg = TrainConfig::new(Variant::PlifStepBn.config().reduced(8));
        cfg.batch_size = 2;
        cfg.epochs = 3;
        cfg.seed = 5;
        (archive.frames, cfg)
    }

    #[test]
    fn runs_are_deterministic_and_follow_the_schedule() {
        let (frames, cfg) = tiny();
        let train: Vec<usize> = (0..30).collect();
        let test: Vec<usize> = (30..40).collect();
        let a = train_run(&frames, &train, &test, &cfg, &mut |_| {}).unwrap();
        let b = train_run(&frames, &train, &test, &cfg, &mut |_| {}).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.log, b.log);
        assert_eq!(a.test.len(), 10);
        for e in &a.log {
            assert_eq!(e.lr, lr_at(&cfg.schedule, e.epoch));
            assert!(e.train_loss.is_finite());
        }
        assert!(!a.model.is_training());
    }

    #[test]
    fn playback_of_labels_is_perfect() {
        let (frames, _) = tiny();
        let preds: Vec<_> = frames.iter().map(|f| f.pose).collect();
        let m = evaluate_predictions(&preds, &frames).unwrap();
        assert_eq!((m.mean_position_error_m, m.mean_rotation_error_deg), (0.0, 0.0));
    }

    #[test]
    fn misaligned_indices_are_rejected() {
        let (frames, cfg) = tiny();
        let train: Vec<usize> = (1..11).collect();
        assert!(train_run(&frames, &train, &[], &cfg, &mut |_| {}).is_err());
    }
}
