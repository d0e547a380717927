//! Synthetic labeled event streams: a wireframe mock target (a cuboid body
//! with two flat panels) moves in front of a pinhole camera. Every 1 ms the
//! wireframe is rasterized into an anti-aliased coverage map. Each pixel
//! keeps the coverage level at its last event; every time the current level
//! moves a full contrast threshold away from it the pixel fires a Poisson
//! number of events whose polarity is the sign of the change.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::events::{inject_uniform_noise, Event, EventStream, Polarity, SensorGeometry};
use crate::framebuild::{associate_poses, window_events, FrameArchive};
use crate::kv::KvMap;
use crate::pose::{Pose6D, TimedPose};

use super::DatasetError;

const MICRO_STEP_US: u64 = 1_000;
const POSE_STEP_US: u64 = 100_000;
const NEAR_PLANE: f64 = 1e-3;

/// Linear approach from `start` to `end_translation` plus a constant-rate
/// tumble about a fixed axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub start: Pose6D,
    pub end_translation: [f64; 3],
    pub tumble_axis: [f64; 3],
    pub tumble_deg_per_s: f64,
}

impl Trajectory {
    pub fn pose_at(&self, t_us: u64, duration_us: u64) -> Pose6D {
        let a = t_us as f64 / duration_us as f64;
        let s = &self.start.translation;
        let e = &self.end_translation;
        let translation = [0, 1, 2].map(|i| s[i] + (e[i] - s[i]) * a);
        let r0 = Rotation3::from_scaled_axis(Vector3::from(self.start.rotation));
        let axis = Vector3::from(self.tumble_axis);
        let rotation = if axis.norm() > 0.0 && self.tumble_deg_per_s != 0.0 {
            let angle = self.tumble_deg_per_s.to_radians() * t_us as f64 * 1e-6;
            let tumble = Rotation3::from_scaled_axis(axis.normalize() * angle);
            (tumble * r0).scaled_axis()
        } else {
            r0.scaled_axis()
        };
        Pose6D::new(translation, [rotation.x, rotation.y, rotation.z])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneConfig {
    pub geometry: SensorGeometry,
    pub focal_px: f64,
    pub vertices: Vec<[f64; 3]>,
    pub edges: Vec<(usize, usize)>,
    pub trajectory: Trajectory,
    /// Multiple of 100 ms.
    pub duration_ms: u64,
    /// Mean events per threshold crossing.
    pub event_rate: f64,
    /// Coverage change per crossing.
    pub contrast_threshold: f64,
    /// Uniform background noise, events per second over the whole sensor.
    pub noise_rate: f64,
    pub seed: u64,
}

/// Eight cuboid corners and two rectangular panels along the x axis, each
/// joined to the body by a strut.
fn mock_target(half: [f64; 3], panel_span: f64) -> (Vec<[f64; 3]>, Vec<(usize, usize)>) {
    let [a, b, c] = half;
    let mut v = Vec::new();
    for &x in &[-a, a] {
        for &y in &[-b, b] {
            for &z in &[-c, c] {
                v.push([x, y, z]);
            }
        }
    }
    let mut e = Vec::new();
    for i in 0..8usize {
        for j in i + 1..8 {
            if (i ^ j).count_ones() == 1 {
                e.push((i, j));
            }
        }
    }
    let ph = b * 0.8;
    let pw = c * 0.2;
    for side in [-1.0, 1.0] {
        let base = v.len();
        let x0 = side * (a + 0.25 * panel_span);
        let x1 = side * (a + 1.25 * panel_span);
        v.extend([[x0, -ph, -pw], [x1, -ph, -pw], [x1, ph, pw], [x0, ph, pw]]);
        e.extend([(base, base + 1), (base + 1, base + 2), (base + 2, base + 3), (base + 3, base)]);
        v.push([side * a, 0.0, 0.0]);
        v.push([x0, 0.0, 0.0]);
        e.push((base + 4, base + 5));
    }
    (v, e)
}

impl SyntheticSceneConfig {
    /// A 64x64 desk-scale scene: the target approaches from 2 to 1.5 units
    /// while drifting sideways and tumbling slowly.
    pub fn desk(seed: u64) -> Self {
        let (vertices, edges) = mock_target([0.15, 0.1, 0.1], 0.25);
        Self {
            geometry: SensorGeometry { width: 64, height: 64 },
            focal_px: 60.0,
            vertices,
            edges,
            trajectory: Trajectory {
                start: Pose6D::new([-0.3, -0.1, 2.0], [0.2, 0.0, 0.0]),
                end_translation: [0.3, 0.1, 1.5],
                tumble_axis: [0.0, 1.0, 0.0],
                tumble_deg_per_s: 9.0,
            },
            duration_ms: 20_000,
            event_rate: 1.0,
            contrast_threshold: 0.15,
            noise_rate: 0.0,
            seed,
        }
    }

    pub const KEYS: [&'static str; 16] = [
        "width",
        "height",
        "focal_px",
        "body_half_extents",
        "panel_span",
        "start_translation",
        "start_rotation",
        "end_translation",
        "tumble_axis",
        "tumble_deg_per_s",
        "duration_ms",
        "event_rate",
        "contrast_threshold",
        "noise_rate",
        "seed",
        "window_ms",
    ];

    /// Reads a flat `key = value` scene file; keys missing from the file
    /// keep the [`SyntheticSceneConfig::desk`] values.
    pub fn from_kv(kv: &KvMap) -> Result<Self, DatasetError> {
        kv.reject_unknown(&Self::KEYS)?;
        let mut cfg = Self::desk(kv.get_or("seed", 0)?);
        cfg.geometry = SensorGeometry::new(
            kv.get_or("width", cfg.geometry.width)?,
            kv.get_or("height", cfg.geometry.height)?,
        )?;
        cfg.focal_px = kv.get_or("focal_px", cfg.focal_px)?;
        let half = kv.floats::<3>("body_half_extents")?.unwrap_or([0.15, 0.1, 0.1]);
        let span = kv.get_or("panel_span", 0.25)?;
        (cfg.vertices, cfg.edges) = mock_target(half, span);
        let t = &mut cfg.trajectory;
        t.start.translation = kv.floats("start_translation")?.unwrap_or(t.start.translation);
        t.start.rotation = kv.floats("start_rotation")?.unwrap_or(t.start.rotation);
        t.end_translation = kv.floats("end_translation")?.unwrap_or(t.end_translation);
        t.tumble_axis = kv.floats("tumble_axis")?.unwrap_or(t.tumble_axis);
        t.tumble_deg_per_s = kv.get_or("tumble_deg_per_s", t.tumble_deg_per_s)?;
        cfg.duration_ms = kv.get_or("duration_ms", cfg.duration_ms)?;
        cfg.event_rate = kv.get_or("event_rate", cfg.event_rate)?;
        cfg.contrast_threshold = kv.get_or("contrast_threshold", cfg.contrast_threshold)?;
        cfg.noise_rate = kv.get_or("noise_rate", cfg.noise_rate)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Invalid(m));
        if self.duration_ms == 0 || self.duration_ms % 100 != 0 {
            return bad(format!("duration_ms {} must be a positive multiple of 100", self.duration_ms));
        }
        if !(self.focal_px > 0.0) {
            return bad(format!("focal_px {}", self.focal_px));
        }
        if !(self.event_rate >= 0.0) || !(self.noise_rate >= 0.0) {
            return bad("rates must be non-negative".into());
        }
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold <= 1.0) {
            return bad(format!("contrast_threshold {}", self.contrast_threshold));
        }
        if let Some(&(a, b)) = self.edges.iter().find(|(a, b)| *a >= self.vertices.len() || *b >= self.vertices.len()) {
            return bad(format!("edge ({a}, {b}) references a missing vertex"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub stream: EventStream,
    pub poses: Vec<TimedPose>,
}

/// Rasterizes the wireframe at `pose`. Returns `None` when no edge sample
/// lands on the sensor.
fn coverage(cfg: &SyntheticSceneConfig, pose: &Pose6D, t_ms: u64, out: &mut [f64]) -> Result<bool, DatasetError> {
    out.iter_mut().for_each(|v| *v = 0.0);
    let (w, h) = (cfg.geometry.width as usize, cfg.geometry.height as usize);
    let rot = Rotation3::from_scaled_axis(Vector3::from(pose.rotation));
    let t = Vector3::from(pose.translation);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut projected = Vec::with_capacity(cfg.vertices.len());
    for v in &cfg.vertices {
        let p = rot * Vector3::from(*v) + t;
        if p.z <= NEAR_PLANE {
            return Err(DatasetError::OutOfView { t_ms });
        }
        projected.push((cfg.focal_px * p.x / p.z + cx - 0.5, cfg.focal_px * p.y / p.z + cy - 0.5));
    }
    let mut visible = false;
    for &(a, b) in &cfg.edges {
        let (p, q) = (projected[a], projected[b]);
        let len = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
        let n = (len * 2.0).ceil().max(1.0) as usize;
        // each sample deposits half a pixel of ink, split bilinearly
        for i in 0..=n {
            let s = i as f64 / n as f64;
            let x = p.0 + (q.0 - p.0) * s;
            let y = p.1 + (q.1 - p.1) * s;
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            for (dx, dy, wgt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                let (px, py) = (x0 as i64 + dx, y0 as i64 + dy);
                if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                    let c = &mut out[py as usize * w + px as usize];
                    *c = (*c + 0.5 * wgt).min(1.0);
                    visible = true;
                }
            }
        }
    }
    Ok(visible)
}

pub fn synth_generate(cfg: &SyntheticSceneConfig) -> Result<SyntheticScene, DatasetError> {
    cfg.validate()?;
    let duration_us = cfg.duration_ms * 1_000;
    let pixels = cfg.geometry.pixel_count();
    let w = cfg.geometry.width as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poisson = (cfg.event_rate > 0.0).then(|| Poisson::new(cfg.event_rate).expect("positive rate"));

    let mut reference = vec![0.0; pixels];
    let mut cur = vec![0.0; pixels];
    if !coverage(cfg, &cfg.trajectory.pose_at(0, duration_us), 0, &mut reference)? {
        return Err(DatasetError::OutOfView { t_ms: 0 });
    }
    let mut events = Vec::new();
    for step in 1..=duration_us / MICRO_STEP_US {
        let t_end = step * MICRO_STEP_US;
        let pose = cfg.trajectory.pose_at(t_end, duration_us);
        if !coverage(cfg, &pose, t_end / 1_000, &mut cur)? {
            return Err(DatasetError::OutOfView { t_ms: t_end / 1_000 });
        }
        for (i, (&c, r)) in cur.iter().zip(reference.iter_mut()).enumerate() {
            let delta = c - *r;
            let crossings = (delta.abs() / cfg.contrast_threshold).floor();
            if crossings < 1.0 {
                continue;
            }
            *r += delta.signum() * crossings * cfg.contrast_threshold;
            let Some(poisson) = &poisson else { continue };
            let polarity = if delta > 0.0 { Polarity::Positive } else { Polarity::Negative };
            for _ in 0..crossings as usize {
                let count = poisson.sample(&mut rng) as usize;
                for _ in 0..count {
                    let t_us = rng.random_range(t_end - MICRO_STEP_US..t_end);
                    events.push(Event::new(t_us, (i % w) as u16, (i / w) as u16, polarity));
                }
            }
        }
    }
    events.sort_by_key(|e| e.t_us);
    let mut stream = EventStream::new(cfg.geometry, events)?;
    if cfg.noise_rate > 0.0 && !stream.is_empty() {
        stream = inject_uniform_noise(&stream, cfg.noise_rate, cfg.seed ^ 0x5eed)?;
    }
    let poses = (0..=duration_us / POSE_STEP_US)
        .map(|k| TimedPose {
            t_us: k * POSE_STEP_US,
            pose: cfg.trajectory.pose_at(k * POSE_STEP_US, duration_us),
        })
        .collect();
    Ok(SyntheticScene { stream, poses })
}

/// Generates a scene and runs it through windowing, binarization and pose
/// association.
pub fn synth_frames(cfg: &SyntheticSceneConfig, window_ms: u32) -> Result<FrameArchive, DatasetError> {
    let scene = synth_generate(cfg)?;
    let counts = window_events(&scene.stream, window_ms)?;
    let assoc = associate_poses(&counts, &scene.poses)?;
    Ok(FrameArchive {
        geometry: cfg.geometry,
        window_len_ms: window_ms,
        frames: assoc.frames,
    })
}

/// `n_sequences` independent one-second scenes, each with its own seeded
/// start pose, drift and tumble, cut into ten labeled frames apiece.
/// Geometry, camera, target and event model come from `base`.
pub fn synth_sequences(
    base: &SyntheticSceneConfig,
    n_sequences: usize,
    seed: u64,
) -> Result<FrameArchive, DatasetError> {
    const FRAMES: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(n_sequences * FRAMES);
    for _ in 0..n_sequences {
        let mut cfg = base.clone();
        cfg.duration_ms = 100 * FRAMES as u64;
        cfg.seed = rng.random();
        let start = [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
            rng.random_range(1.6..2.4),
        ];
        let drift = [
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        ];
        let rotation = [0, 1, 2].map(|_| rng.random_range(-0.5..0.5));
        let axis = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
        cfg.trajectory = Trajectory {
            start: Pose6D::new(start, rotation),
            end_translation: [0, 1, 2].map(|i| start[i] + drift[i]),
            tumble_axis: axis,
            tumble_deg_per_s: rng.random_range(20.0..60.0),
        };
        let archive = synth_frames(&cfg, 100)?;
        if archive.frames.len() < FRAMES {
            return Err(DatasetError::Invalid(format!(
                "scene {} gave {} frames, expected {FRAMES}",
                frames.len() / FRAMES,
                archive.frames.len()
            )));
        }
        frames.extend(archive.frames.into_iter().take(FRAMES));
    }
    Ok(FrameArchive {
        geometry: base.geometry,
        window_len_ms: 100,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSceneConfig {
        SyntheticSceneConfig {
            duration_ms: 1_000,
            ..SyntheticSceneConfig::desk(seed)
        }
    }

    #[test]
    fn static_target_is_silent() {
        let mut cfg = small(1);
        cfg.trajectory.end_translation = cfg.trajectory.start.translation;
        cfg.trajectory.tumble_deg_per_s = 0.0;
        let scene = synth_generate(&cfg).unwrap();
        assert!(scene.stream.is_empty());
        assert_eq!(scene.poses.len(), 11);
    }

    #[test]
    fn drift_moves_the_centroid() {
        let mut cfg = small(2);
        cfg.trajectory.start = Pose6D::new([-0.4, 0.0, 2.0], [0.0; 3]);
        cfg.trajectory.end_translation = [0.4, 0.0, 2.0];
        cfg.trajectory.tumble_deg_per_s = 0.0;
        let scene = synth_generate(&cfg).unwrap();
        let counts = window_events(&scene.stream, 100).unwrap();
        let centroid = |f: &crate::framebuild::CountFrame| {
            let (mut sx, mut n) = (0.0, 0.0);
            for (i, (&p, &q)) in f.pos_counts.iter().zip(&f.neg_counts).enumerate() {
                sx += (i % f.width) as f64 * f64::from(p + q);
                n += f64::from(p + q);
            }
            sx / n
        };
        assert!(centroid(&counts[counts.len() - 2]) > centroid(&counts[1]) + 5.0);
    }

    #[test]
    fn seeded_and_bounded() {
        let a = synth_generate(&small(3)).unwrap();
        assert_eq!(a, synth_generate(&small(3)).unwrap());
        assert!(!a.stream.is_empty());
        assert!(a.stream.is_sorted());
        let mut far = small(3);
        far.trajectory.end_translation = [40.0, 0.0, 2.0];
        assert!(matches!(synth_generate(&far), Err(DatasetError::OutOfView { .. })));
    }

    #[test]
    fn sequences_have_ten_frames_each() {
        let a = synth_sequences(&SyntheticSceneConfig::desk(0), 3, 8).unwrap();
        assert_eq!(a.frames.len(), 30);
        assert!(a.frames.iter().all(|f| f.frame.active_count() > 0));
        assert_ne!(a.frames[0].pose, a.frames[10].pose);
    }

    #[test]
    fn kv_overrides() {
        let kv = KvMap::parse("width = 48\nheight = 40\nduration_ms = 500\nseed = 4\n").unwrap();
        let cfg = SyntheticSceneConfig::from_kv(&kv).unwrap();
        assert_eq!((cfg.geometry.width, cfg.duration_ms, cfg.seed), (48, 500, 4));
        assert!(SyntheticSceneConfig::from_kv(&KvMap::parse("colour = red").unwrap()).is_err());
        assert!(SyntheticSceneConfig::from_kv(&KvMap::parse("duration_ms = 150").unwrap()).is_err());
    }
}
