//! Renders the desk-scale scene and writes its event stream and pose track
//! next to each other in the system temp directory.

use spikepose::dataset::{synth_generate, SyntheticSceneConfig};
use spikepose::events::write_binary;
use spikepose::pose::write_pose_track;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = SyntheticSceneConfig::desk(11);
    cfg.noise_rate = 2_000.0;
    let scene = synth_generate(&cfg)?;
    let positive = scene.stream.events.iter().filter(|e| e.polarity.bit() == 1).count();
    println!(
        "{}x{} sensor, {} ms: {} events ({} positive), {} poses",
        cfg.geometry.width,
        cfg.geometry.height,
        cfg.duration_ms,
        scene.stream.len(),
        positive,
        scene.poses.len()
    );
    for p in scene.poses.iter().step_by(5) {
        let [x, y, z, rx, ry, rz] = p.pose.to_array();
        println!("t={:>7} us  t=({x:+.3}, {y:+.3}, {z:.3})  r=({rx:+.3}, {ry:+.3}, {rz:+.3})", p.t_us);
    }

    let dir = std::env::temp_dir();
    let events_path = dir.join("spikepose_desk.spke");
    let poses_path = dir.join("spikepose_desk_poses.csv");
    std::fs::write(&events_path, write_binary(&scene.stream))?;
    std::fs::write(&poses_path, write_pose_track(&scene.poses))?;
    println!("wrote {} and {}", events_path.display(), poses_path.display());
    Ok(())
}
