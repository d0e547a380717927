//! Windows a synthetic stream into 100 ms count frames, binarizes them and
//! labels each with the nearest pose.

use spikepose::dataset::{synth_generate, SyntheticSceneConfig};
use spikepose::framebuild::{associate_poses, binarize, sparsity, window_events, FrameArchive, DEFAULT_WINDOW_MS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth_generate(&SyntheticSceneConfig::desk(3))?;
    let counts = window_events(&scene.stream, DEFAULT_WINDOW_MS)?;
    let total: u64 = counts.iter().map(|c| c.total()).sum();
    println!("{} events in {} windows ({} counted)", scene.stream.len(), counts.len(), total);

    for c in counts.iter().take(3) {
        let b = binarize(c);
        println!(
            "window [{}, {}) us: {} events, {} active pixels, sparsity {:.4}",
            c.window_start_us,
            c.window_end_us,
            c.total(),
            b.active_count(),
            sparsity(&b)
        );
    }

    let assoc = associate_poses(&counts, &scene.poses)?;
    let archive = FrameArchive {
        geometry: scene.stream.geometry,
        window_len_ms: DEFAULT_WINDOW_MS,
        frames: assoc.frames,
    };
    let bytes = archive.to_bytes()?;
    println!(
        "{} labeled frames, {} dropped, archive {} bytes",
        archive.frames.len(),
        assoc.dropped,
        bytes.len()
    );
    let first = &archive.frames[0];
    println!("first label at {} us: {:?}", first.t_center_us, first.pose.to_array());
    assert_eq!(FrameArchive::from_bytes(&bytes)?, archive);
    Ok(())
}
