//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Pass criterion numbers as arguments to run a subset.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikepose::dataset::{kfold_plans, split_sequences, synth_sequences, SyntheticSceneConfig, SEQ_LEN};
use spikepose::events::{Event, EventStream, Polarity, SensorGeometry};
use spikepose::framebuild::{binarize, window_events, BinaryFrame, CountFrame, LabeledFrame};
use spikepose::model::{fuse_bn, ForwardHook, S2E2Model, Variant, PARAM_BUDGET};
use spikepose::numcore::gradcheck::{check_batchnorm, check_conv2d, check_plif, check_relu, REL_TOL};
use spikepose::numcore::{lr_at, LrSchedule, ScheduleKind, Tape, Tensor, PLIF_THRESHOLD};
use spikepose::trainer::{evaluate, loss, rotation_error, train_run, TrainConfig};
use spikepose::Pose6D;

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parameter_budget() -> Outcome {
    let mut counts = Vec::new();
    for v in Variant::ALL {
        let n = S2E2Model::<f32>::build(&v.config(), 0).map_err(err)?.count_params();
        ensure((PARAM_BUDGET.0..=PARAM_BUDGET.1).contains(&n), || {
            format!("{}: {n} outside [{}, {}]", v.config().label(), PARAM_BUDGET.0, PARAM_BUDGET.1)
        })?;
        counts.push(n);
    }
    Ok(format!(
        "{} .. {} over six variants",
        counts.iter().min().unwrap(),
        counts.iter().max().unwrap()
    ))
}

/// Per pixel: the stronger polarity wins; equal counts (zero or not) leave
/// the pixel empty.
fn naive_binarize(c: &CountFrame) -> Vec<Option<Polarity>> {
    (0..c.width * c.height)
        .map(|i| {
            let (p, n) = (c.pos_counts[i], c.neg_counts[i]);
            if p > n {
                Some(Polarity::Positive)
            } else if n > p {
                Some(Polarity::Negative)
            } else {
                None
            }
        })
        .collect()
}

fn binarization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut zero_ties, mut nonzero_ties) = (0usize, 0usize);
    for k in 0..10_000 {
        let mut c = CountFrame::zeros(8, 8, 0, 100_000);
        for i in 0..64 {
            c.pos_counts[i] = rng.random_range(0..=5);
            c.neg_counts[i] = rng.random_range(0..=5);
            match (c.pos_counts[i], c.neg_counts[i]) {
                (0, 0) => zero_ties += 1,
                (p, n) if p == n => nonzero_ties += 1,
                _ => {}
            }
        }
        let b = binarize(&c);
        let expect = naive_binarize(&c);
        for (i, want) in expect.iter().enumerate() {
            let got = b.pixel(i % 8, i / 8);
            ensure(got == *want, || format!("frame {k}, pixel {i}: {got:?} != {want:?}"))?;
        }
    }
    ensure(zero_ties > 0 && nonzero_ties > 0, || "tie cases not exercised".into())?;
    Ok(format!("640000 pixels, {zero_ties} empty ties, {nonzero_ties} nonzero ties"))
}

fn event_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut total = 0usize;
    for s in 0..100 {
        let geometry = SensorGeometry::new(rng.random_range(1..=64), rng.random_range(1..=64)).map_err(err)?;
        let n = rng.random_range(1..=10_000);
        let span = rng.random_range(1..=3_000_000u64);
        let mut ts: Vec<u64> = (0..n).map(|_| rng.random_range(0..=span)).collect();
        ts.sort_unstable();
        let events = ts
            .into_iter()
            .map(|t| {
                let x = rng.random_range(0..geometry.width) as u16;
                let y = rng.random_range(0..geometry.height) as u16;
                let p = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
                Event::new(t, x, y, p)
            })
            .collect();
        let stream = EventStream::new(geometry, events).map_err(err)?;
        let window = rng.random_range(1..=200);
        let counted: u64 = window_events(&stream, window).map_err(err)?.iter().map(CountFrame::total).sum();
        ensure(counted == n as u64, || format!("stream {s}: {counted} counted, {n} events"))?;
        total += n;
    }
    Ok(format!("{total} events in 100 streams"))
}

fn gradient_checks() -> Outcome {
    let reports = [
        check_conv2d(40, 20).map_err(err)?,
        check_batchnorm(41, 20).map_err(err)?,
        check_relu(42, 20).map_err(err)?,
        check_plif(43, 20).map_err(err)?,
    ];
    for r in &reports {
        ensure(r.cases >= 20 && r.max_rel_error < REL_TOL, || {
            format!("{}: max relative error {:e} at {}", r.op, r.max_rel_error, r.worst_case)
        })?;
    }
    Ok(reports
        .iter()
        .map(|r| format!("{} {:.1e}", r.op, r.max_rel_error))
        .collect::<Vec<_>>()
        .join(", "))
}

fn random_binary_frame(rng: &mut ChaCha8Rng, hw: usize) -> BinaryFrame {
    let mut f = BinaryFrame::zeros(hw, hw);
    for y in 0..hw {
        for x in 0..hw {
            match rng.random_range(0..10) {
                0 => f.set_pixel(x, y, Some(Polarity::Positive)),
                1 => f.set_pixel(x, y, Some(Polarity::Negative)),
                _ => {}
            }
        }
    }
    f
}

fn dense(frames: &[&BinaryFrame]) -> Tensor<f32> {
    let (w, h) = (frames[0].width(), frames[0].height());
    let mut data = vec![0.0f32; frames.len() * 2 * w * h];
    for (f, chunk) in frames.iter().zip(data.chunks_exact_mut(2 * w * h)) {
        f.write_dense(chunk);
    }
    Tensor::from_vec(&[frames.len(), 2, h, w], data).unwrap()
}

/// Gives every batchnorm parameter and running statistic a value away from
/// its identity initialization.
fn randomize_bn(model: &mut S2E2Model<f32>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, p)| p.name.contains(".bn."))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v = rng.random_range(0.5..1.5);
        }
    }
    for block in model.blocks_mut() {
        if let Some(bn) = &mut block.bn {
            bn.running_mean.iter_mut().for_each(|m| *m = rng.random_range(-0.3..0.3));
            bn.running_var.iter_mut().for_each(|v| *v = rng.random_range(0.3..2.0));
        }
    }
}

fn bn_fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let variants = [Variant::ReluBn, Variant::PlifStepBn, Variant::PlifCosBn];
    let hw = 32;
    let (mut worst, mut worst_et, mut worst_er) = (0.0f32, 0.0f64, 0.0f64);
    for i in 0..20 {
        let cfg = variants[i % 3].config().reduced([4, 8][i % 2]);
        let mut model = S2E2Model::<f32>::build(&cfg, rng.random()).map_err(err)?;
        randomize_bn(&mut model, &mut rng);
        model.set_training(false);
        let fused = fuse_bn(&model).map_err(err)?;

        let frames: Vec<LabeledFrame> = (0..2 * SEQ_LEN)
            .map(|k| LabeledFrame {
                frame: random_binary_frame(&mut rng, hw),
                pose: Pose6D::new(
                    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..3.0)],
                    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                ),
                t_center_us: k as u64 * 100_000,
            })
            .collect();
        // both sequences as one batch, frames ordered step-major
        let inputs: Vec<Tensor<f32>> = (0..SEQ_LEN)
            .map(|t| dense(&[&frames[t].frame, &frames[SEQ_LEN + t].frame]))
            .collect();
        let a = model.predict_sequence(&inputs).map_err(err)?;
        let b = fused.predict_sequence(&inputs).map_err(err)?;
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.data().iter().zip(y.data()) {
                worst = worst.max((p - q).abs());
            }
        }
        let all: Vec<usize> = (0..frames.len()).collect();
        let ma = evaluate(&model, &frames, &all, SEQ_LEN).map_err(err)?;
        let mb = evaluate(&fused, &frames, &all, SEQ_LEN).map_err(err)?;
        worst_et = worst_et.max((ma.mean_position_error_m - mb.mean_position_error_m).abs());
        worst_er = worst_er.max((ma.mean_rotation_error_deg - mb.mean_rotation_error_deg).abs());
    }
    ensure(worst < 1e-4, || format!("max |fused - unfused| = {worst:e}"))?;
    ensure(worst_et < 1e-3 && worst_er < 1e-2, || {
        format!("metric drift Et {worst_et:e} m, Er {worst_er:e} deg")
    })?;
    Ok(format!("max diff {worst:.1e}, Et drift {worst_et:.1e} m, Er drift {worst_er:.1e} deg"))
}

#[derive(Default)]
struct SpikeAudit {
    updates: usize,
    spiking_outputs: usize,
    failure: Option<String>,
}

impl ForwardHook<f32> for SpikeAudit {
    fn on_plif(&mut self, block: &str, step: usize, charge: &Tensor<f32>, spikes: &Tensor<f32>, next_v: &Tensor<f32>) {
        self.updates += 1;
        let theta = PLIF_THRESHOLD as f32;
        for ((&h, &s), &v) in charge.data().iter().zip(spikes.data()).zip(next_v.data()) {
            let reset_ok = (v + theta * s - h).abs() <= 1e-6 * h.abs().max(1.0);
            if !(s == 0.0 || s == 1.0) || !reset_ok {
                self.failure.get_or_insert(format!("{block} step {step}: H {h}, S {s}, V' {v}"));
            }
        }
    }

    fn on_block(&mut self, block: &str, step: usize, output: &Tensor<f32>, spiking: bool) {
        if spiking {
            self.spiking_outputs += 1;
            if let Some(v) = output.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
                self.failure.get_or_insert(format!("{block} step {step}: activation {v}"));
            }
        }
    }
}

fn spike_binarity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut audit = SpikeAudit::default();
    let mut spikes_seen = 0usize;
    for i in 0..100 {
        let cfg = [Variant::PlifCosBn, Variant::PlifStepNoBn][i % 2].config().reduced(8);
        let mut model = S2E2Model::<f32>::build(&cfg, i as u64).map_err(err)?;
        let frames: Vec<BinaryFrame> = (0..SEQ_LEN).map(|_| random_binary_frame(&mut rng, 32)).collect();
        let inputs: Vec<Tensor<f32>> = frames.iter().map(|f| dense(&[f])).collect();
        spikes_seen += inputs.iter().map(|t| t.data().iter().filter(|&&v| v == 1.0).count()).sum::<usize>();
        if i % 4 == 0 {
            // training forward, batch statistics
            let mut tape = Tape::new();
            model.forward_sequence_with_hook(&mut tape, &inputs, &mut audit).map_err(err)?;
        } else {
            model.set_training(false);
            model.predict_sequence_with_hook(&inputs, &mut audit).map_err(err)?;
        }
        if let Some(f) = audit.failure.take() {
            return Err(format!("sequence {i}: {f}"));
        }
    }
    ensure(audit.updates > 0 && spikes_seen > 0, || "no PLIF updates observed".into())?;
    Ok(format!(
        "{} PLIF updates, {} spiking block outputs checked",
        audit.updates, audit.spiking_outputs
    ))
}

fn scheduler_exactness() -> Outcome {
    let step = LrSchedule::new(1e-3, ScheduleKind::StepLr { step_size: 10, gamma: 0.5 }).map_err(err)?;
    let cos = LrSchedule::new(1e-3, ScheduleKind::Cosine { t_max: 100, eta_min: 1e-6 }).map_err(err)?;
    let checks = [
        ("step@0", lr_at(&step, 0), 1e-3),
        ("step@10", lr_at(&step, 10), 1e-3 * 0.5),
        ("step@25", lr_at(&step, 25), 1e-3 * 0.5 * 0.5),
        ("cos@0", lr_at(&cos, 0), 1e-3),
        ("cos@100", lr_at(&cos, 100), 1e-6 + (1e-3 - 1e-6) * (1.0 + PI.cos()) / 2.0),
    ];
    for (name, got, want) in checks {
        ensure(got.to_bits() == want.to_bits(), || format!("{name}: {got:e} != {want:e}"))?;
    }
    ensure(lr_at(&step, 10) == 5e-4 && lr_at(&step, 25) == 2.5e-4 && lr_at(&cos, 100) == 1e-6, || {
        "closed forms differ from the literals".into()
    })?;
    Ok("5 epochs bit-exact".into())
}

fn loss_metric_identities() -> Outcome {
    let p = Pose6D::new([0.3, -0.2, 2.1], [0.1, 0.7, -0.4]);
    let zero = Pose6D::default();
    let cases = [
        ("loss(p,p)", loss(&p, &p).map_err(err)?, 0.0),
        ("loss (3,4,0)", loss(&Pose6D::new([3.0, 4.0, 0.0], [0.0; 3]), &zero).map_err(err)?, 5.0),
        ("loss 1 deg", loss(&Pose6D::new([0.0; 3], [PI / 180.0, 0.0, 0.0]), &zero).map_err(err)?, 1.0),
        ("Er identity", rotation_error(&zero, &zero), 0.0),
        ("Er p,p", rotation_error(&p, &p), 0.0),
        ("Er half turn", rotation_error(&Pose6D::new([0.0; 3], [PI, 0.0, 0.0]), &zero), 180.0),
    ];
    for (name, got, want) in cases {
        ensure((got - want).abs() <= 1e-12 * want.max(1.0), || format!("{name}: {got} != {want}"))?;
    }
    Ok("6 identities".into())
}

fn desk_overfit() -> Outcome {
    let archive = synth_sequences(&SyntheticSceneConfig::desk(0), 20, 42).map_err(err)?;
    let all: Vec<usize> = (0..archive.frames.len()).collect();

    // Relu + BN: memorize the training set
    let start = Instant::now();
    let mut cfg = TrainConfig::new(Variant::ReluBn.config().reduced(2));
    cfg.epochs = 200;
    cfg.batch_size = 10;
    cfg.schedule = LrSchedule::new(0.02, ScheduleKind::Cosine { t_max: 200, eta_min: 1e-6 }).map_err(err)?;
    cfg.augment = None;
    cfg.seed = 1;
    let out = train_run(&archive.frames, &all, &[], &cfg, &mut |_| {}).map_err(err)?;
    let params = out.model.count_params();
    let m = evaluate(&out.model, &archive.frames, &all, cfg.seq_len).map_err(err)?;
    let relu_time = start.elapsed();
    ensure(params >= 50_000, || format!("{params} parameters"))?;
    ensure(m.mean_position_error_m < 0.05, || {
        format!("Relu W BN train Et {:.4} (Er {:.2} deg)", m.mean_position_error_m, m.mean_rotation_error_deg)
    })?;
    ensure(relu_time < Duration::from_secs(15 * 60), || format!("Relu W BN took {relu_time:.1?}"))?;

    // PLIF + BN + cosine: the loss must at least halve
    let start = Instant::now();
    let mut cfg = TrainConfig::new(Variant::PlifCosBn.config().reduced(2));
    cfg.epochs = 1000;
    cfg.batch_size = 20;
    cfg.schedule = LrSchedule::new(0.01, ScheduleKind::Cosine { t_max: 1000, eta_min: 1e-6 }).map_err(err)?;
    cfg.augment = None;
    cfg.seed = 1;
    let out = train_run(&archive.frames, &all, &[], &cfg, &mut |_| {}).map_err(err)?;
    let plif_time = start.elapsed();
    let first = out.log.first().ok_or("empty log")?.train_loss;
    let last = out.log.last().ok_or("empty log")?.train_loss;
    ensure(last < 0.5 * first, || format!("PLIF Coslr W BN loss {first:.3} -> {last:.3}"))?;
    ensure(plif_time < Duration::from_secs(30 * 60), || format!("PLIF Coslr W BN took {plif_time:.1?}"))?;

    Ok(format!(
        "Relu W BN ({params} params) train Et {:.4}, Er {:.2} deg in {relu_time:.0?}; \
         PLIF Coslr W BN loss {first:.2} -> {last:.2} in {plif_time:.0?}",
        m.mean_position_error_m, m.mean_rotation_error_deg
    ))
}

fn split_protocol() -> Outcome {
    let n = 5415;
    let plan = split_sequences(n, 0.8, SEQ_LEN, 0).map_err(err)?;
    let chunks = (plan.train.len() + plan.test.len()) / SEQ_LEN;
    ensure(chunks == 541, || format!("{chunks} chunks"))?;
    ensure(plan.train.len() == 4330 && plan.test.len() == 1080 && plan.dropped == 5, || {
        format!("{}/{} frames, {} dropped", plan.train.len(), plan.test.len(), plan.dropped)
    })?;
    let mut seen: BTreeSet<usize> = plan.train.iter().copied().collect();
    ensure(plan.test.iter().all(|i| seen.insert(*i)), || "train and test overlap".into())?;
    ensure(seen.len() == 5410 && seen.iter().all(|&i| i < 5410), || "split is not a partition".into())?;

    let plans = kfold_plans(n, 5, 3, 0).map_err(err)?;
    ensure(plans.len() == 15, || format!("{} plans", plans.len()))?;
    for repeat in 0..3 {
        let folds: Vec<_> = plans.iter().filter(|p| p.repeat == repeat).collect();
        ensure(folds.len() == 5, || format!("repeat {repeat}: {} folds", folds.len()))?;
        let mut union = BTreeSet::new();
        for f in &folds {
            let test: BTreeSet<usize> = f.test.iter().copied().collect();
            ensure(f.train.iter().all(|i| !test.contains(i)), || "fold train/test overlap".into())?;
            ensure(f.train.len() + f.test.len() == 5410, || "fold does not cover all chunks".into())?;
            ensure(f.test.len() / SEQ_LEN >= 108 && f.test.len() / SEQ_LEN <= 109, || {
                format!("fold of {} frames", f.test.len())
            })?;
            ensure(
                f.test.chunks(SEQ_LEN).all(|c| c[0] % SEQ_LEN == 0 && c.windows(2).all(|w| w[1] == w[0] + 1)),
                || "test sequences not aligned".into(),
            )?;
            for &i in &f.test {
                ensure(union.insert(i), || format!("frame {i} tested twice in repeat {repeat}"))?;
            }
        }
        ensure(union.len() == 5410, || format!("repeat {repeat} tests {} frames", union.len()))?;
    }
    ensure(plans[0].test != plans[5].test, || "repeats share a shuffle".into())?;
    Ok("541 chunks, 4330/1080/5, 15 partitioning plans".into())
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "parameter budget", budget: Duration::from_secs(1), run: parameter_budget },
        Criterion { id: 2, name: "binarization oracle", budget: Duration::from_secs(5), run: binarization_oracle },
        Criterion { id: 3, name: "event conservation", budget: Duration::from_secs(5), run: event_conservation },
        Criterion { id: 4, name: "gradient checks", budget: Duration::from_secs(60), run: gradient_checks },
        Criterion { id: 5, name: "BN fusion equivalence", budget: Duration::from_secs(60), run: bn_fusion },
        Criterion { id: 6, name: "spike binarity and soft reset", budget: Duration::from_secs(30), run: spike_binarity },
        Criterion { id: 7, name: "scheduler exactness", budget: Duration::from_secs(1), run: scheduler_exactness },
        Criterion { id: 8, name: "loss and metric identities", budget: Duration::from_secs(1), run: loss_metric_identities },
        Criterion { id: 9, name: "desk-scale overfit", budget: Duration::from_secs(45 * 60), run: desk_overfit },
        Criterion { id: 10, name: "split and K-fold protocol", budget: Duration::from_secs(1), run: split_protocol },
    ];
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();

    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= c.budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.2?}, budget {:?}", c.budget))
            }
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {} ({elapsed:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {} ({elapsed:.2?}): {why}", c.id, c.name);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
