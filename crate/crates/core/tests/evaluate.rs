use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikepose::dataset::{synth_sequences, SyntheticSceneConfig, SEQ_LEN};
use spikepose::framebuild::LabeledFrame;
use spikepose::model::{fuse_bn, ModelError, S2E2Config, S2E2Model, SequencePredictor, Variant};
use spikepose::numcore::Tensor;
use spikepose::trainer::{evaluate, train_run, TrainConfig};

/// Predicts from the input alone: x and y are the positive and negative
/// pixel counts over 100, the rest a fixed pose.
struct CountingPredictor(S2E2Config);

impl SequencePredictor<f32> for CountingPredictor {
    fn model_config(&self) -> &S2E2Config {
        &self.0
    }

    fn predict(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>, ModelError> {
        Ok(frames
            .iter()
            .map(|f| {
                let n = f.shape()[0];
                let plane = f.len() / n / 2;
                let mut out = Vec::new();
                for s in f.data().chunks_exact(2 * plane) {
                    let pos: f32 = s[..plane].iter().sum();
                    let neg: f32 = s[plane..].iter().sum();
                    out.extend([pos / 100.0, neg / 100.0, 2.0, 0.1, 0.0, 0.0]);
                }
                Tensor::from_vec(&[n, 6], out).unwrap()
            })
            .collect())
    }
}

/// Rotation angle between two rotation vectors through rotation matrices:
/// `acos((tr(Ra^T Rb) - 1) / 2)`.
fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    fn matrix(r: [f64; 3]) -> [[f64; 3]; 3] {
        let th = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if th == 0.0 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        let k = [r[0] / th, r[1] / th, r[2] / th];
        let (s, c) = th.sin_cos();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]][i][j];
                m[i][j] = if i == j { c } else { 0.0 } + s * kx + (1.0 - c) * k[i] * k[j];
            }
        }
        m
    }
    let (ma, mb) = (matrix(a), matrix(b));
    let trace: f64 = (0..3).map(|i| (0..3).map(|j| ma[j][i] * mb[j][i]).sum::<f64>()).sum();
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

fn scene() -> Vec<LabeledFrame> {
    let mut cfg = SyntheticSceneConfig::desk(0);
    cfg.geometry.width = 32;
    cfg.geometry.height = 32;
    cfg.focal_px = 30.0;
    synth_sequences(&cfg, 6, 9).unwrap().frames
}

#[test]
fn evaluate_matches_a_per_frame_oracle() {
    let frames = scene();
    let indices: Vec<usize> = (10..60).collect();
    let m = evaluate(&CountingPredictor(Variant::ReluBn.config()), &frames, &indices, SEQ_LEN).unwrap();
    assert_eq!(m.len(), 50);

    let (mut et, mut er) = (0.0, 0.0);
    for &i in &indices {
        let f = &frames[i];
        let pos = f.frame.positive_plane().count_ones() as f32 / 100.0;
        let neg = f.frame.negative_plane().count_ones() as f32 / 100.0;
        let [x, y, z, rx, ry, rz] = f.pose.to_array();
        let d = [pos as f64 - x, neg as f64 - y, 2.0 - z];
        et += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        er += angle_deg([0.1f32 as f64, 0.0, 0.0], [rx, ry, rz]);
    }
    et /= 50.0;
    er /= 50.0;
    assert!((m.mean_position_error_m - et).abs() < 1e-6, "{} vs {et}", m.mean_position_error_m);
    assert!((m.mean_rotation_error_deg - er).abs() < 1e-6, "{} vs {er}", m.mean_rotation_error_deg);
}

#[test]
fn constant_mean_pose_scores_its_spread() {
    let frames = scene();
    let all: Vec<usize> = (0..frames.len()).collect();
    let mean = frames.iter().fold([0.0; 3], |mut acc, f| {
        for (a, t) in acc.iter_mut().zip(f.pose.translation) {
            *a += t / frames.len() as f64;
        }
        acc
    });

    struct Constant(S2E2Config, [f32; 6]);
    impl SequencePredictor<f32> for Constant {
        fn model_config(&self) -> &S2E2Config {
            &self.0
        }
        fn predict(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>, ModelError> {
            let n = frames[0].shape()[0];
            Ok(frames
                .iter()
                .map(|_| Tensor::from_vec(&[n, 6], self.1.repeat(n)).unwrap())
                .collect())
        }
    }
    let p = [mean[0] as f32, mean[1] as f32, mean[2] as f32, 0.0, 0.0, 0.0];
    let m = evaluate(&Constant(Variant::ReluBn.config(), p), &frames, &all, SEQ_LEN).unwrap();
    let spread: f64 = frames
        .iter()
        .map(|f| {
            let d: Vec<f64> = (0..3).map(|k| p[k] as f64 - f.pose.translation[k]).collect();
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .sum::<f64>()
        / frames.len() as f64;
    assert!((m.mean_position_error_m - spread).abs() < 1e-9);
    let rot: f64 = frames.iter().map(|f| angle_deg([0.0; 3], f.pose.rotation)).sum::<f64>() / frames.len() as f64;
    assert!((m.mean_rotation_error_deg - rot).abs() < 1e-6);
}

#[test]
fn fused_and_unfused_metrics_agree_after_training() {
    let frames = scene();
    let train: Vec<usize> = (0..40).collect();
    let test: Vec<usize> = (40..60).collect();
    for v in [Variant::ReluBn, Variant::PlifCosBn] {
        let mut cfg = TrainConfig::new(v.config().reduced(8));
        cfg.epochs = 2;
        cfg.batch_size = 2;
        let out = train_run(&frames, &train, &test, &cfg, &mut |_| {}).unwrap();
        let fused = fuse_bn(&out.model).unwrap();
        let a = evaluate(&out.model, &frames, &test, SEQ_LEN).unwrap();
        let b = evaluate(&fused, &frames, &test, SEQ_LEN).unwrap();
        assert_eq!(a, out.test);
        assert!((a.mean_position_error_m - b.mean_position_error_m).abs() < 1e-3);
        assert!((a.mean_rotation_error_deg - b.mean_rotation_error_deg).abs() < 1e-2);
    }
}

#[test]
fn evaluation_is_independent_of_sequence_grouping() {
    let frames = scene();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = {
        let mut m = S2E2Model::<f32>::build(&Variant::PlifStepBn.config().reduced(8), rng.random()).unwrap();
        m.set_training(false);
        m
    };
    let all: Vec<usize> = (0..60).collect();
    let whole = evaluate(&model, &frames, &all, SEQ_LEN).unwrap();
    let mut errors = (Vec::new(), Vec::new());
    for part in all.chunks(20) {
        let m = evaluate(&model, &frames, part, SEQ_LEN).unwrap();
        errors.0.extend(m.position_errors);
        errors.1.extend(m.rotation_errors);
    }
    assert_eq!(whole.position_errors, errors.0);
    assert_eq!(whole.rotation_errors, errors.1);
}
