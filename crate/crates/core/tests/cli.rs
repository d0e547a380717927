use std::path::Path;
use std::process::{Command, Output};

use spikepose::framebuild::FrameArchive;

fn spikepose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikepose"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn metrics_row(o: &Output) -> Vec<String> {
    let text = stdout(o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("frames,Et,Er,fused"));
    lines.next().unwrap().split(',').map(str::to_string).collect()
}

const THREE_EVENTS: &str = "# 640,480\n0,0,0,0\n1000,3,2,1\n50000,1,1,1\n";
const TWO_POSES: &str = "# pose_track v1\n0,0,0,2,0,0,0\n100000,0.1,0,2,0,0,0.1\n";

#[test]
fn convert_three_events_gives_one_frame() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ev.csv"), THREE_EVENTS).unwrap();
    std::fs::write(dir.path().join("poses.csv"), TWO_POSES).unwrap();
    let o = spikepose(
        dir.path(),
        &["convert", "--events", "ev.csv", "--poses", "poses.csv", "--out", "f.spkf", "--window-ms", "100"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let archive = FrameArchive::from_bytes(&std::fs::read(dir.path().join("f.spkf")).unwrap()).unwrap();
    assert_eq!(archive.frames.len(), 1);
    assert_eq!(archive.frames[0].frame.active_count(), 3);
    assert!(o.stdout.is_empty());
}

#[test]
fn gradcheck_passes_on_a_clean_build() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikepose(dir.path(), &["gradcheck", "--cases", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for op in ["conv2d", "batchnorm", "relu", "plif_step"] {
        assert!(out.lines().any(|l| l.starts_with(op) && l.ends_with("true")), "{out}");
    }
}

#[test]
fn eval_of_labels_as_predictions_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ev.csv"), THREE_EVENTS).unwrap();
    std::fs::write(dir.path().join("poses.csv"), TWO_POSES).unwrap();
    let o = spikepose(dir.path(), &["convert", "--events", "ev.csv", "--poses", "poses.csv", "--out", "f.spkf"]);
    assert!(o.status.success());
    let archive = FrameArchive::from_bytes(&std::fs::read(dir.path().join("f.spkf")).unwrap()).unwrap();
    let labels: Vec<_> = archive
        .frames
        .iter()
        .map(|f| spikepose::TimedPose {
            t_us: f.t_center_us,
            pose: f.pose,
        })
        .collect();
    std::fs::write(dir.path().join("pred.csv"), spikepose::pose::write_pose_track(&labels)).unwrap();

    let o = spikepose(dir.path(), &["eval", "--predictions", "pred.csv", "--frames", "f.spkf"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metrics_row(&o), ["1", "0", "0", "false"]);
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spikepose(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(spikepose(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(spikepose(dir.path(), &["split", "--frames", "x"]).status.code(), Some(1));
    assert_eq!(spikepose(dir.path(), &["--help"]).status.code(), Some(0));
    let o = spikepose(dir.path(), &["fuse", "--ckpt", "missing.spkw", "--out", "y"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.csv"), "1,1,1\n").unwrap();
    std::fs::write(dir.path().join("poses.csv"), TWO_POSES).unwrap();
    let o = spikepose(
        dir.path(),
        &["convert", "--events", "bad.csv", "--poses", "poses.csv", "--out", "f", "--width", "8", "--height", "8"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let o = spikepose(
        dir.path(),
        &["train", "--frames", "f", "--plan", "p", "--fold", "0", "--variant", "tanh-bn-step", "--out", "c"],
    );
    assert_eq!(o.status.code(), Some(1));
}

/// synth -> convert -> split -> train -> fuse -> eval, twice, with identical
/// output files.
#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("scene.kv"), "# small scene\nduration_ms = 2000\nseed = 4\nnoise_rate = 500\n").unwrap();

    let run = |tag: &str| -> Vec<Vec<u8>> {
        let ev = format!("ev{tag}.spke");
        let poses = format!("poses{tag}.csv");
        let frames = format!("frames{tag}.spkf");
        let plans = format!("plans{tag}.csv");
        let ckpt = format!("model{tag}.spkw");
        let fused = format!("fused{tag}.spkw");
        let steps: Vec<Vec<&str>> = vec![
            vec!["synth", "--config", "scene.kv", "--out-events", &ev, "--out-poses", &poses],
            vec!["convert", "--events", &ev, "--poses", &poses, "--out", &frames],
            vec!["split", "--frames", &frames, "--k", "2", "--repeats", "1", "--seed", "3", "--out", &plans],
            vec![
                "train", "--frames", &frames, "--plan", &plans, "--fold", "1", "--variant", "plif-bn-cos", "--seed", "2",
                "--out", &ckpt, "--epochs", "2", "--batch-size", "1", "--width-divisor", "8",
            ],
            vec!["fuse", "--ckpt", &ckpt, "--out", &fused],
        ];
        for args in steps {
            let o = spikepose(d, &args);
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let unfused = spikepose(d, &["eval", "--ckpt", &ckpt, "--frames", &frames]);
        let folded = spikepose(d, &["eval", "--ckpt", &ckpt, "--frames", &frames, "--fused"]);
        let stored = spikepose(d, &["eval", "--ckpt", &fused, "--frames", &frames]);
        let a = metrics_row(&unfused);
        let b = metrics_row(&folded);
        assert_eq!(a[0], "20");
        assert_eq!((a[3].as_str(), b[3].as_str()), ("false", "true"));
        assert_eq!(metrics_row(&stored), b);
        for i in 1..3 {
            let (x, y): (f64, f64) = (a[i].parse().unwrap(), b[i].parse().unwrap());
            assert!((x - y).abs() < 1e-2, "{a:?} vs {b:?}");
        }
        let o = spikepose(d, &["eval", "--ckpt", &ckpt, "--frames", &frames, "--plan", &plans, "--fold", "1"]);
        assert_eq!(metrics_row(&o)[0], "10");

        [ev, poses, frames, plans, ckpt.clone(), format!("{ckpt}.cfg"), fused]
            .iter()
            .map(|f| std::fs::read(d.join(f)).unwrap())
            .chain([stdout(&unfused).into_bytes()])
            .collect()
    };
    assert_eq!(run("a"), run("b"));
}
