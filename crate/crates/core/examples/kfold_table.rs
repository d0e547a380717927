//! A miniature K-fold run on synthetic sequences, reported as a comparison
//! table with mean and range over folds.

use spikepose::dataset::{kfold_plans, synth_sequences, SyntheticSceneConfig};
use spikepose::model::Variant;
use spikepose::trainer::{kfold_report, RunReport, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let archive = synth_sequences(&SyntheticSceneConfig::desk(0), 10, 5)?;
    let plans = kfold_plans(archive.frames.len(), 5, 1, 3)?;
    let mut reports = Vec::new();
    for v in [Variant::ReluBn, Variant::PlifCosBn] {
        let mut cfg = TrainConfig::new(v.config().reduced(8));
        cfg.epochs = 3;
        cfg.batch_size = 4;
        let report = kfold_report(&archive.frames, &plans, &cfg, false, 1);
        eprintln!("{} done in {:.1?}", report.model, report.wall_time);
        reports.push(report);
    }
    print!("{}", RunReport::table(&reports));
    print!("{}", RunReport::csv(&reports));
    Ok(())
}
