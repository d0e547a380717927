use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use crate::events::Polarity;
use crate::framebuild::BinaryFrame;

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Chance that a sequence receives noise at all.
    pub noise_seq_prob: f64,
    /// Per pixel-channel chance of a spurious one, given noise.
    pub noise_pixel_rate: f64,
    pub dead_pixel_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_seq_prob: 0.10,
            noise_pixel_rate: 0.001,
            dead_pixel_prob: 0.10,
        }
    }
}

impl AugmentConfig {
    pub const NONE: Self = Self {
        noise_seq_prob: 0.0,
        noise_pixel_rate: 0.0,
        dead_pixel_prob: 0.0,
    };

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, p) in [
            ("noise_seq_prob", self.noise_seq_prob),
            ("noise_pixel_rate", self.noise_pixel_rate),
            ("dead_pixel_prob", self.dead_pixel_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DatasetError::Invalid(format!("{name} = {p} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augmented {
    pub frames: Vec<BinaryFrame>,
    pub noisy: bool,
    /// `(x, y)` of the dead pixel, if one was drawn.
    pub dead_pixel: Option<(usize, usize)>,
}

/// Sequence-level noise and dead-pixel augmentation. Frames are binary by
/// construction so there is nothing to check on that front.
pub fn augment(frames: &[BinaryFrame], config: &AugmentConfig, seed: u64) -> Result<Augmented, DatasetError> {
    config.validate()?;
    let Some(first) = frames.first() else {
        return Ok(Augmented {
            frames: Vec::new(),
            noisy: false,
            dead_pixel: None,
        });
    };
    let (w, h) = (first.width(), first.height());
    if frames.iter().any(|f| f.width() != w || f.height() != h) {
        return Err(DatasetError::FrameSize);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = rng.random::<f64>() < config.noise_seq_prob;
    let dead = rng.random::<f64>() < config.dead_pixel_prob;
    let mut out = frames.to_vec();

    if noisy && config.noise_pixel_rate > 0.0 && w * h > 0 {
        let cells = 2 * w * h;
        // geometric gaps between hits; the rate is tiny so this touches
        // only the cells that change
        let gaps = Geometric::new(config.noise_pixel_rate).expect("rate validated");
        for frame in &mut out {
            let mut pos_hits = Vec::new();
            let mut neg_hits = Vec::new();
            let mut cell = gaps.sample(&mut rng);
            while (cell as usize) < cells {
                let c = cell as usize;
                if c < w * h {
                    pos_hits.push(c);
                } else {
                    neg_hits.push(c - w * h);
                }
                cell += gaps.sample(&mut rng) + 1;
            }
            let mut pos: Vec<bool> = frame.positive_plane().iter().by_vals().collect();
            let mut neg: Vec<bool> = frame.negative_plane().iter().by_vals().collect();
            pos_hits.iter().for_each(|&i| pos[i] = true);
            neg_hits.iter().for_each(|&i| neg[i] = true);
            for i in pos_hits.iter().chain(&neg_hits) {
                let value = match (pos[*i], neg[*i]) {
                    (true, true) => {
                        pos[*i] = false;
                        neg[*i] = false;
                        None
                    }
                    (true, false) => Some(Polarity::Positive),
                    (false, true) => Some(Polarity::Negative),
                    (false, false) => None,
                };
                frame.set_pixel(i % w, i / w, value);
            }
        }
    }

    let dead_pixel = dead.then(|| (rng.random_range(0..w), rng.random_range(0..h)));
    if let Some((x, y)) = dead_pixel {
        for frame in &mut out {
            frame.set_pixel(x, y, None);
        }
    }
    Ok(Augmented {
        frames: out,
        noisy,
        dead_pixel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_frames(w: usize, h: usize, n: usize) -> Vec<BinaryFrame> {
        (0..n)
            .map(|t| {
                let mut f = BinaryFrame::zeros(w, h);
                for i in (t..w * h).step_by(7) {
                    let p = if i % 2 == 0 { Polarity::Positive } else { Polarity::Negative };
                    f.set_pixel(i % w, i / w, Some(p));
                }
                f
            })
            .collect()
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let f = sample_frames(16, 12, 10);
        let a = augment(&f, &AugmentConfig::NONE, 3).unwrap();
        assert_eq!(a.frames, f);
        assert!(!a.noisy && a.dead_pixel.is_none());
    }

    #[test]
    fn dead_pixel_is_cleared_everywhere() {
        let f: Vec<_> = (0..10)
            .map(|_| {
                let mut f = BinaryFrame::zeros(8, 8);
                (0..64).for_each(|i| f.set_pixel(i % 8, i / 8, Some(Polarity::Positive)));
                f
            })
            .collect();
        let cfg = AugmentConfig {
            dead_pixel_prob: 1.0,
            ..AugmentConfig::NONE
        };
        let a = augment(&f, &cfg, 5).unwrap();
        let (x, y) = a.dead_pixel.unwrap();
        assert!(a.frames.iter().all(|fr| fr.pixel(x, y).is_none()));
        assert!(a.frames.iter().all(|fr| fr.active_count() == 63));
    }

    #[test]
    fn noise_keeps_exclusivity_and_is_seeded() {
        let f = sample_frames(32, 24, 10);
        let cfg = AugmentConfig {
            noise_seq_prob: 1.0,
            noise_pixel_rate: 0.05,
            dead_pixel_prob: 0.0,
        };
        let a = augment(&f, &cfg, 9).unwrap();
        assert!(a.noisy);
        assert_ne!(a.frames, f);
        assert_eq!(a, augment(&f, &cfg, 9).unwrap());
        for fr in &a.frames {
            assert!(BinaryFrame::from_planes(32, 24, fr.positive_plane().to_bitvec(), fr.negative_plane().to_bitvec()).is_ok());
        }
        assert!(augment(&f, &AugmentConfig { noise_pixel_rate: 2.0, ..cfg }, 0).is_err());
    }

    #[test]
    fn noise_count_matches_binomial_expectation() {
        let (w, h, steps, p) = (640, 480, 10, 0.001);
        let frames = vec![BinaryFrame::zeros(w, h); steps];
        let cfg = AugmentConfig {
            noise_seq_prob: 1.0,
            noise_pixel_rate: p,
            dead_pixel_prob: 0.0,
        };
        let total: usize = (0..100)
            .map(|seed| {
                let a = augment(&frames, &cfg, seed).unwrap();
                a.frames.iter().map(BinaryFrame::active_count).sum::<usize>()
            })
            .sum();
        let mean = total as f64 / 100.0;
        // every cell flips with probability p; a pixel hit in both channels
        // is cleared, losing two ones
        let cells = (2 * w * h * steps) as f64;
        let expected = cells * p - 2.0 * (cells / 2.0) * p * p;
        assert!((mean - expected).abs() < 0.01 * expected, "{mean} vs {expected}");
    }
}
