//! Overfits a reduced-width model on a 20-sequence synthetic scene set.
//!
//! `cargo run --release --example train_desk_scale -- [variant] [epochs] [batch] [lr] [divisor] [cos_tmax] [seed]`
//! with `variant` a slug such as `relu-bn-step` or `plif-bn-cos`. A `cos_tmax`
//! replaces the variant's schedule by cosine annealing over that many epochs.

use std::time::Instant;

use spikepose::dataset::{synth_sequences, SyntheticSceneConfig};
use spikepose::model::S2E2Config;
use spikepose::numcore::ScheduleKind;
use spikepose::trainer::{evaluate, train_run, TrainConfig, EPOCH_LOG_HEADER};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let variant = args.next().unwrap_or_else(|| "relu-bn-step".into());
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let batch: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let lr: Option<f64> = args.next().map(|s| s.parse()).transpose()?;
    let divisor: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let cos_tmax: Option<usize> = args.next().map(|s| s.parse()).transpose()?;
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);

    let archive = synth_sequences(&SyntheticSceneConfig::desk(0), 20, 42)?;
    let active: usize = archive.frames.iter().map(|f| f.frame.active_count()).sum();
    println!(
        "{} frames, mean {:.1} active pixels per frame",
        archive.frames.len(),
        active as f64 / archive.frames.len() as f64
    );

    let mut cfg = TrainConfig::new(S2E2Config::from_slug(&variant)?.reduced(divisor));
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    if let Some(lr) = lr {
        cfg.schedule.base_lr = lr;
    }
    if let Some(t_max) = cos_tmax {
        cfg.schedule.kind = ScheduleKind::Cosine { t_max, eta_min: 1e-6 };
    }
    cfg.augment = None;
    cfg.seed = seed;
    let all: Vec<usize> = (0..archive.frames.len()).collect();

    let start = Instant::now();
    println!("{EPOCH_LOG_HEADER}");
    let out = train_run(&archive.frames, &all, &[], &cfg, &mut |e| {
        if e.epoch % 20 == 0 || e.epoch + 1 == epochs {
            println!("{}", e.csv_row());
        }
    })?;
    let m = evaluate(&out.model, &archive.frames, &all, cfg.seq_len)?;
    println!(
        "{}: {} params, train Et {:.4} m, Er {:.2} deg, {:.1?}",
        cfg.model.label(),
        out.model.count_params(),
        m.mean_position_error_m,
        m.mean_rotation_error_deg,
        start.elapsed()
    );
    Ok(())
}
