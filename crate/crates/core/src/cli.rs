//! The `spikepose` command line. Machine-readable output goes to stdout,
//! progress and diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
//! (divergence or a failed gradient check).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::dataset::{
    kfold_plans, parse_plans_csv, synth_generate, write_plans_csv, DatasetError, FoldPlan,
    SyntheticSceneConfig, SEQ_LEN,
};
use crate::events::{read_any, validate_sort, write_binary, write_csv, SensorGeometry};
use crate::framebuild::{associate_poses, window_events, FrameArchive, DEFAULT_WINDOW_MS};
use crate::kv::KvMap;
use crate::model::{fuse_bn, load_checkpoint, save_checkpoint, save_fused, LoadedModel, ModelError, S2E2Config};
use crate::numcore::gradcheck::run_suite;
use crate::pose::{parse_pose_track, write_pose_track};
use crate::trainer::{evaluate, evaluate_predictions, train_run, TrainConfig, TrainError, EPOCH_LOG_HEADER};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn data(context: impl std::fmt::Display) -> impl FnOnce(String) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } | TrainError::NonFinite(_) => CliError::Numeric(e.to_string()),
            TrainError::Num(crate::numcore::NumError::NonFinite { .. }) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "spikepose", version, about = "Event-camera frames and 6D pose regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Window an event stream, binarize and label the frames.
    Convert(ConvertArgs),
    /// Generate a synthetic event stream and pose track.
    Synth(SynthArgs),
    /// Write K-fold plans over a frame archive.
    Split(SplitArgs),
    /// Train one fold and write a checkpoint.
    Train(TrainArgs),
    /// Print metrics of a checkpoint, or of a prediction file, as CSV.
    Eval(EvalArgs),
    /// Fold batchnorm into the convolutions of a checkpoint.
    Fuse(FuseArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Event stream, CSV or SPKE.
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW_MS)]
    pub window_ms: u32,
    /// Sensor width for CSV input without a geometry header.
    #[arg(long, requires = "height")]
    pub width: Option<u32>,
    #[arg(long, requires = "width")]
    pub height: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Flat `key = value` scene file.
    #[arg(long)]
    pub config: PathBuf,
    /// Written as SPKE unless the name ends in `.csv`.
    #[arg(long)]
    pub out_events: PathBuf,
    #[arg(long)]
    pub out_poses: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub fold: usize,
    #[arg(long, default_value_t = 0)]
    pub repeat: usize,
    /// e.g. `reluxbnxstep`, `plif-nobn-cos`.
    #[arg(long)]
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sequences per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Divide every channel count by this factor; lifts the parameter budget.
    #[arg(long)]
    pub width_divisor: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    /// Accepted for scripting compatibility; the model step is single-threaded.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Per-epoch CSV log; stderr when absent.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub ckpt: Option<PathBuf>,
    /// Pose track with one prediction per evaluated frame, in frame order.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub frames: PathBuf,
    /// Fold batchnorm before evaluating an unfused checkpoint.
    #[arg(long)]
    pub fused: bool,
    /// Evaluate only the test frames of this plan file's fold.
    #[arg(long, requires = "fold")]
    pub plan: Option<PathBuf>,
    #[arg(long, requires = "plan")]
    pub fold: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub repeat: usize,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random shapes per operation.
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_archive(path: &Path) -> Result<FrameArchive, CliError> {
    FrameArchive::from_bytes(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_plan(path: &Path, fold: usize, repeat: usize) -> Result<FoldPlan, CliError> {
    let text = String::from_utf8(read(path)?).map_err(|e| CliError::Data(e.to_string()))?;
    parse_plans_csv(&text)?
        .into_iter()
        .find(|p| p.fold == fold && p.repeat == repeat)
        .ok_or_else(|| CliError::Usage(format!("no fold {fold} of repeat {repeat} in {}", path.display())))
}

/// Runs one parsed command, writing machine-readable output to `out`.
pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match command {
        Command::Convert(a) => convert(a),
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a, out),
        Command::Fuse(a) => fuse(a),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn convert(a: ConvertArgs) -> Result<(), CliError> {
    let geometry = match (a.width, a.height) {
        (Some(w), Some(h)) => Some(SensorGeometry::new(w, h).map_err(|e| CliError::Usage(e.to_string()))?),
        _ => None,
    };
    if a.window_ms == 0 {
        return Err(CliError::Usage("--window-ms must be positive".into()));
    }
    let stream = read_any(&read(&a.events)?, geometry).map_err(|e| data(a.events.display())(e.to_string()))?;
    let stream = if stream.is_sorted() {
        stream
    } else {
        eprintln!("events out of order; sorting by timestamp");
        validate_sort(&stream)
    };
    let track = parse_pose_track(&read(&a.poses)?).map_err(|e| data(a.poses.display())(e.to_string()))?;
    let counts = window_events(&stream, a.window_ms).map_err(|e| CliError::Data(e.to_string()))?;
    let assoc = associate_poses(&counts, &track).map_err(|e| CliError::Data(e.to_string()))?;
    let archive = FrameArchive {
        geometry: stream.geometry,
        window_len_ms: a.window_ms,
        frames: assoc.frames,
    };
    write(&a.out, archive.to_bytes().map_err(|e| CliError::Data(e.to_string()))?)?;
    eprintln!(
        "{} events -> {} frames ({} windows without a pose dropped)",
        stream.len(),
        archive.frames.len(),
        assoc.dropped
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let text = String::from_utf8(read(&a.config)?).map_err(|e| CliError::Data(e.to_string()))?;
    let kv = KvMap::parse(&text).map_err(|e| data(a.config.display())(e.to_string()))?;
    let cfg = SyntheticSceneConfig::from_kv(&kv)?;
    let scene = synth_generate(&cfg)?;
    let is_csv = a.out_events.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        write(&a.out_events, write_csv(&scene.stream))?;
    } else {
        write(&a.out_events, write_binary(&scene.stream))?;
    }
    write(&a.out_poses, write_pose_track(&scene.poses))?;
    eprintln!("{} events, {} poses", scene.stream.len(), scene.poses.len());
    Ok(())
}

fn split(a: SplitArgs) -> Result<(), CliError> {
    let archive = load_archive(&a.frames)?;
    let plans = kfold_plans(archive.frames.len(), a.k, a.repeats, a.seed).map_err(|e| match e {
        DatasetError::Invalid(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    })?;
    write(&a.out, write_plans_csv(&plans))?;
    eprintln!("{} plans over {} frames", plans.len(), archive.frames.len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut model = S2E2Config::from_slug(&a.variant).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(d) = a.width_divisor {
        if d == 0 {
            return Err(CliError::Usage("--width-divisor must be positive".into()));
        }
        model = model.reduced(d);
    }
    let archive = load_archive(&a.frames)?;
    let plan = load_plan(&a.plan, a.fold, a.repeat)?;
    let mut cfg = TrainConfig::new(model);
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.schedule.base_lr = lr;
    }
    if a.no_augment {
        cfg.augment = None;
    }
    let mut log_file = match &a.log {
        Some(p) => Some(fs::File::create(p).map_err(|e| data(p.display())(e.to_string()))?),
        None => None,
    };
    let mut log_line = |line: &str| match log_file.as_mut() {
        Some(f) => {
            let _ = writeln!(f, "{line}");
        }
        None => eprintln!("{line}"),
    };
    log_line(EPOCH_LOG_HEADER);
    let outcome = train_run(&archive.frames, &plan.train, &plan.test, &cfg, &mut |e| log_line(&e.csv_row()))?;
    save_checkpoint(&outcome.model, &a.out)?;
    eprintln!(
        "{}: test Et {:.4} m, Er {:.3} deg over {} frames",
        cfg.model.label(),
        outcome.test.mean_position_error_m,
        outcome.test.mean_rotation_error_deg,
        outcome.test.len()
    );
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let archive = load_archive(&a.frames)?;
    let indices: Vec<usize> = match (&a.plan, a.fold) {
        (Some(p), Some(f)) => load_plan(p, f, a.repeat)?.test,
        // a model sees whole sequences only; a prediction file covers every frame
        _ if a.predictions.is_some() => (0..archive.frames.len()).collect(),
        _ => (0..archive.frames.len() / SEQ_LEN * SEQ_LEN).collect(),
    };
    let (metrics, fused) = if let Some(path) = &a.predictions {
        let track = parse_pose_track(&read(path)?).map_err(|e| data(path.display())(e.to_string()))?;
        let preds: Vec<_> = track.iter().map(|p| p.pose).collect();
        let frames: Vec<_> = indices.iter().map(|&i| archive.frames[i].clone()).collect();
        (evaluate_predictions(&preds, &frames)?, false)
    } else {
        let ckpt = a.ckpt.as_ref().expect("clap requires --ckpt or --predictions");
        let loaded = load_checkpoint(ckpt)?;
        let model = match loaded {
            LoadedModel::Full(m) if a.fused => LoadedModel::Fused(fuse_bn(&m)?),
            other => other,
        };
        let fused = model.is_fused();
        (evaluate(&model, &archive.frames, &indices, SEQ_LEN)?, fused)
    };
    let io = |e: std::io::Error| CliError::Data(e.to_string());
    writeln!(out, "frames,Et,Er,fused").map_err(io)?;
    writeln!(
        out,
        "{},{},{},{}",
        metrics.len(),
        metrics.mean_position_error_m,
        metrics.mean_rotation_error_deg,
        fused
    )
    .map_err(io)?;
    Ok(())
}

fn fuse(a: FuseArgs) -> Result<(), CliError> {
    match load_checkpoint(&a.ckpt)? {
        LoadedModel::Full(m) => save_fused(&fuse_bn(&m)?, &a.out)?,
        LoadedModel::Fused(_) => return Err(CliError::Usage(format!("{} is already fused", a.ckpt.display()))),
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    if a.cases == 0 {
        return Err(CliError::Usage("--cases must be positive".into()));
    }
    let reports = run_suite(a.seed, a.cases).map_err(|e| CliError::Numeric(e.to_string()))?;
    let io = |e: std::io::Error| CliError::Data(e.to_string());
    writeln!(out, "op,cases,max_rel_error,passed").map_err(io)?;
    for r in &reports {
        writeln!(out, "{},{},{:e},{}", r.op, r.cases, r.max_rel_error, r.passed()).map_err(io)?;
    }
    match reports.iter().find(|r| !r.passed()) {
        Some(r) => Err(CliError::Numeric(format!(
            "{} gradient check failed: relative error {:e} at {}",
            r.op, r.max_rel_error, r.worst_case
        ))),
        None => Ok(()),
    }
}
