use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::dataset::FoldPlan;
use crate::framebuild::LabeledFrame;
use crate::model::fuse_bn;

use super::{evaluate, train_run, Metrics, TrainConfig};

pub const REPORT_HEADER: &str = "model,Et_mean,Et_min,Et_max,Er_mean,Er_min,Er_max";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, min and max; `None` for no values.
pub fn aggregate(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // rounding in the sum can push the mean a hair outside the range
    Some(Stat {
        mean: mean.clamp(min, max),
        min,
        max,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub repeat: usize,
    pub fold: usize,
    /// Test metrics, or why the fold was abandoned.
    pub result: Result<Metrics, String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub model: String,
    pub config: TrainConfig,
    /// Whether test metrics came from the BN-folded model.
    pub fused: bool,
    pub folds: Vec<FoldOutcome>,
    pub et: Option<Stat>,
    pub er: Option<Stat>,
    pub wall_time: Duration,
}

impl RunReport {
    pub fn from_folds(
        model: impl Into<String>,
        config: TrainConfig,
        fused: bool,
        folds: Vec<FoldOutcome>,
        wall_time: Duration,
    ) -> Self {
        let done: Vec<&Metrics> = folds.iter().filter_map(|f| f.result.as_ref().ok()).collect();
        let et: Vec<f64> = done.iter().map(|m| m.mean_position_error_m).collect();
        let er: Vec<f64> = done.iter().map(|m| m.mean_rotation_error_deg).collect();
        Self {
            model: model.into(),
            config,
            fused,
            et: aggregate(&et),
            er: aggregate(&er),
            folds,
            wall_time,
        }
    }

    /// Set when at least one fold failed; the aggregates then cover only the
    /// completed folds.
    pub fn incomplete(&self) -> bool {
        self.folds.iter().any(|f| f.result.is_err())
    }

    pub fn csv_row(&self) -> String {
        let f = |s: Option<Stat>| match s {
            Some(s) => format!("{:.6},{:.6},{:.6}", s.mean, s.min, s.max),
            None => "nan,nan,nan".into(),
        };
        format!("{},{},{}", self.model, f(self.et), f(self.er))
    }

    pub fn csv(reports: &[RunReport]) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// Comparison table: `mean [min;max]` per metric, one model per row.
    pub fn table(reports: &[RunReport]) -> String {
        let cell = |s: Option<Stat>, digits: usize| match s {
            Some(s) => format!("{:.d$} [{:.d$};{:.d$}]", s.mean, s.min, s.max, d = digits),
            None => "n/a".into(),
        };
        let rows: Vec<[String; 3]> = reports
            .iter()
            .map(|r| {
                let mut name = r.model.clone();
                if r.incomplete() {
                    name.push_str(" (incomplete)");
                }
                [name, cell(r.et, 2), cell(r.er, 1)]
            })
            .collect();
        let head = ["Model".to_string(), "Et (m)".into(), "Er (deg)".into()];
        let width = |c: usize| rows.iter().chain([&head]).map(|r| r[c].len()).max().unwrap_or(0);
        let (w0, w1) = (width(0), width(1));
        let mut out = String::new();
        for r in std::iter::once(&head).chain(&rows) {
            writeln!(out, "{:<w0$} | {:<w1$} | {}", r[0], r[1], r[2]).unwrap();
        }
        out
    }
}

/// Trains and evaluates one model per plan. With `threads > 1` folds run on
/// separate threads; each fold is seeded from its plan, so the report does
/// not depend on the thread count.
pub fn kfold_report(
    frames: &[LabeledFrame],
    plans: &[FoldPlan],
    config: &TrainConfig,
    fused: bool,
    threads: usize,
) -> RunReport {
    let start = Instant::now();
    let run = |plan: &FoldPlan| -> FoldOutcome {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(plan.seed);
        let result = train_run(frames, &plan.train, &plan.test, &cfg, &mut |_| {}).and_then(|out| {
            if fused {
                let fm = fuse_bn(&out.model)?;
                evaluate(&fm, frames, &plan.test, cfg.seq_len)
            } else {
                Ok(out.test)
            }
        });
        FoldOutcome {
            repeat: plan.repeat,
            fold: plan.fold,
            result: result.map_err(|e| e.to_string()),
        }
    };
    let threads = threads.clamp(1, plans.len().max(1));
    let folds: Vec<FoldOutcome> = if threads == 1 {
        plans.iter().map(run).collect()
    } else {
        let mut slots: Vec<Option<FoldOutcome>> = vec![None; plans.len()];
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let run = &run;
                    s.spawn(move || {
                        plans
                            .iter()
                            .enumerate()
                            .skip(t)
                            .step_by(threads)
                            .map(|(i, p)| (i, run(p)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, outcome) in h.join().expect("fold thread panicked") {
                    slots[i] = Some(outcome);
                }
            }
        });
        slots.into_iter().map(|o| o.expect("every fold ran")).collect()
    };
    RunReport::from_folds(config.model.label(), config.clone(), fused, folds, start.elapsed())
}
