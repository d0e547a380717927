//! Fixed-window event accumulation, strongest-polarity binarization, pose
//! labelling and the packed `SPKF` frame archive.
//!
//! Windows are half-open `[start, start + len)` on a grid anchored at the
//! first event of the stream. Each window becomes a [`CountFrame`]; a
//! [`BinaryFrame`] keeps, per pixel, only the polarity with strictly more
//! events (ties, including zero, leave the pixel empty).
//!
//! Archive layout (little-endian): `SPKF`, version `u32`, width `u32`,
//! height `u32`, window length in ms `u32`, frame count `u32`; then per frame
//! `t_center_us u64`, six `f64` pose components, the positive bitplane and the
//! negative bitplane. Each bitplane is `ceil(W*H/8)` bytes, row-major, bit `i`
//! of the plane at byte `i / 8`, bit position `i % 8` (LSB first).

use bitvec::prelude::*;
use thiserror::Error;

use crate::events::{EventStream, Polarity, SensorGeometry};
use crate::numcore::Scalar;
use crate::pose::{Pose6D, TimedPose};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"SPKF";
pub const ARCHIVE_VERSION: u32 = 1;
pub const ARCHIVE_HEADER_LEN: usize = 24;
pub const DEFAULT_WINDOW_MS: u32 = 100;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("event stream must be sorted by timestamp")]
    Unsorted,
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("pose track is empty")]
    EmptyPoseTrack,
    #[error("pose track timestamps are not sorted")]
    UnsortedPoseTrack,
    #[error("pixel ({x},{y}) is set in both polarity channels")]
    NotExclusive { x: usize, y: usize },
    #[error("bitplane holds {found} bits, expected {expected}")]
    PlaneSize { expected: usize, found: usize },
    #[error("bad magic {0:?}, expected SPKF")]
    BadMagic([u8; 4]),
    #[error("unsupported SPKF version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated frame archive: {0}")]
    Truncated(String),
    #[error("frame {index} is {found:?}, archive geometry is {expected:?}")]
    GeometryMismatch {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Geometry(#[from] crate::events::EventError),
}

/// Per-pixel event counts of one window, row-major `y * width + x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountFrame {
    pub window_start_us: u64,
    pub window_end_us: u64,
    pub width: usize,
    pub height: usize,
    pub pos_counts: Vec<u32>,
    pub neg_counts: Vec<u32>,
}

impl CountFrame {
    pub fn zeros(width: usize, height: usize, window_start_us: u64, window_end_us: u64) -> Self {
        Self {
            window_start_us,
            window_end_us,
            width,
            height,
            pos_counts: vec![0; width * height],
            neg_counts: vec![0; width * height],
        }
    }

    pub fn window_len_us(&self) -> u64 {
        self.window_end_us - self.window_start_us
    }

    pub fn center_us(&self) -> u64 {
        self.window_start_us + self.window_len_us() / 2
    }

    pub fn total(&self) -> u64 {
        self.pos_counts
            .iter()
            .chain(&self.neg_counts)
            .map(|&c| c as u64)
            .sum()
    }
}

/// Two exclusive bitplanes: channel 0 positive, channel 1 negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFrame {
    width: usize,
    height: usize,
    pos: BitVec<u8, Lsb0>,
    neg: BitVec<u8, Lsb0>,
}

impl BinaryFrame {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pos: bitvec![u8, Lsb0; 0; width * height],
            neg: bitvec![u8, Lsb0; 0; width * height],
        }
    }

    pub fn from_planes(
        width: usize,
        height: usize,
        pos: BitVec<u8, Lsb0>,
        neg: BitVec<u8, Lsb0>,
    ) -> Result<Self, FrameError> {
        for plane in [&pos, &neg] {
            if plane.len() != width * height {
                return Err(FrameError::PlaneSize {
                    expected: width * height,
                    found: plane.len(),
                });
            }
        }
        if let Some(i) = pos.iter_ones().find(|&i| neg[i]) {
            return Err(FrameError::NotExclusive {
                x: i % width,
                y: i / width,
            });
        }
        Ok(Self {
            width,
            height,
            pos,
            neg,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> Option<Polarity> {
        let i = y * self.width + x;
        if self.pos[i] {
            Some(Polarity::Positive)
        } else if self.neg[i] {
            Some(Polarity::Negative)
        } else {
            None
        }
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: Option<Polarity>) {
        let i = y * self.width + x;
        self.pos.set(i, value == Some(Polarity::Positive));
        self.neg.set(i, value == Some(Polarity::Negative));
    }

    pub fn positive_plane(&self) -> &BitSlice<u8, Lsb0> {
        &self.pos
    }

    pub fn negative_plane(&self) -> &BitSlice<u8, Lsb0> {
        &self.neg
    }

    pub fn active_count(&self) -> usize {
        self.pos.count_ones() + self.neg.count_ones()
    }

    /// Writes the dense `2 x H x W` representation into `out`.
    pub fn write_dense<T: Scalar>(&self, out: &mut [T]) {
        let hw = self.width * self.height;
        assert_eq!(out.len(), 2 * hw, "dense buffer must hold 2*H*W values");
        out.fill(T::zero());
        for i in self.pos.iter_ones() {
            out[i] = T::one();
        }
        for i in self.neg.iter_ones() {
            out[hw + i] = T::one();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: BinaryFrame,
    pub pose: Pose6D,
    pub t_center_us: u64,
}

/// Splits a sorted stream into windows of `window_len_ms` milliseconds.
pub fn window_events(stream: &EventStream, window_len_ms: u32) -> Result<Vec<CountFrame>, FrameError> {
    window_events_us(stream, window_len_ms as u64 * 1000)
}

pub fn window_events_us(stream: &EventStream, window_len_us: u64) -> Result<Vec<CountFrame>, FrameError> {
    if window_len_us == 0 {
        return Err(FrameError::ZeroWindow);
    }
    if !stream.is_sorted() {
        return Err(FrameError::Unsorted);
    }
    let (Some(first), Some(last)) = (stream.events.first(), stream.events.last()) else {
        return Ok(Vec::new());
    };
    let (w, h) = (stream.geometry.width as usize, stream.geometry.height as usize);
    let anchor = first.t_us;
    let n_windows = ((last.t_us - anchor) / window_len_us + 1) as usize;
    let mut frames: Vec<CountFrame> = (0..n_windows as u64)
        .map(|k| {
            let start = anchor + k * window_len_us;
            CountFrame::zeros(w, h, start, start + window_len_us)
        })
        .collect();
    for e in &stream.events {
        let k = ((e.t_us - anchor) / window_len_us) as usize;
        let i = e.y as usize * w + e.x as usize;
        let frame = &mut frames[k];
        match e.polarity {
            Polarity::Positive => frame.pos_counts[i] += 1,
            Polarity::Negative => frame.neg_counts[i] += 1,
        }
    }
    Ok(frames)
}

pub fn binarize(counts: &CountFrame) -> BinaryFrame {
    let mut frame = BinaryFrame::zeros(counts.width, counts.height);
    for (i, (&p, &n)) in counts.pos_counts.iter().zip(&counts.neg_counts).enumerate() {
        if p > n {
            frame.pos.set(i, true);
        } else if n > p {
            frame.neg.set(i, true);
        }
    }
    frame
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub frames: Vec<LabeledFrame>,
    /// Windows with no pose within one window length of their center.
    pub dropped: usize,
}

/// Labels each window with the pose nearest its center (earlier pose on a
/// tie) and binarizes it.
pub fn associate_poses(counts: &[CountFrame], track: &[TimedPose]) -> Result<Association, FrameError> {
    if track.is_empty() {
        return Err(FrameError::EmptyPoseTrack);
    }
    if track.windows(2).any(|w| w[0].t_us > w[1].t_us) {
        return Err(FrameError::UnsortedPoseTrack);
    }
    let mut frames = Vec::with_capacity(counts.len());
    let mut dropped = 0;
    for cf in counts {
        let center = cf.center_us();
        let after = track.partition_point(|p| p.t_us < center);
        let nearest = [after.checked_sub(1), (after < track.len()).then_some(after)]
            .into_iter()
            .flatten()
            .min_by_key(|&i| track[i].t_us.abs_diff(center))
            .expect("track is non-empty");
        let pose = &track[nearest];
        if pose.t_us.abs_diff(center) > cf.window_len_us() {
            dropped += 1;
            continue;
        }
        frames.push(LabeledFrame {
            frame: binarize(cf),
            pose: pose.pose,
            t_center_us: center,
        });
    }
    Ok(Association { frames, dropped })
}

/// Fraction of the `2 * H * W` cells that are set.
pub fn sparsity(frame: &BinaryFrame) -> f64 {
    frame.active_count() as f64 / (2 * frame.width * frame.height) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameArchive {
    pub geometry: SensorGeometry,
    pub window_len_ms: u32,
    pub frames: Vec<LabeledFrame>,
}

impl FrameArchive {
    pub fn plane_bytes(&self) -> usize {
        self.geometry.pixel_count().div_ceil(8)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FrameError> {
        let (w, h) = (self.geometry.width as usize, self.geometry.height as usize);
        let plane = self.plane_bytes();
        let mut out = Vec::with_capacity(ARCHIVE_HEADER_LEN + self.frames.len() * (56 + 2 * plane));
        out.extend_from_slice(ARCHIVE_MAGIC);
        for word in [
            ARCHIVE_VERSION,
            self.geometry.width,
            self.geometry.height,
            self.window_len_ms,
            self.frames.len() as u32,
        ] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        for (index, lf) in self.frames.iter().enumerate() {
            if (lf.frame.width, lf.frame.height) != (w, h) {
                return Err(FrameError::GeometryMismatch {
                    index,
                    expected: (w, h),
                    found: (lf.frame.width, lf.frame.height),
                });
            }
            out.extend_from_slice(&lf.t_center_us.to_le_bytes());
            for v in lf.pose.to_array() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for bits in [&lf.frame.pos, &lf.frame.neg] {
                let start = out.len();
                out.resize(start + plane, 0);
                for i in bits.iter_ones() {
                    out[start + i / 8] |= 1 << (i % 8);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < ARCHIVE_HEADER_LEN {
            return Err(FrameError::Truncated("header".into()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != ARCHIVE_MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != ARCHIVE_VERSION {
            return Err(FrameError::UnsupportedVersion(version));
        }
        let geometry = SensorGeometry::new(word(8), word(12))?;
        let window_len_ms = word(16);
        let count = word(20) as usize;
        let (w, h) = (geometry.width as usize, geometry.height as usize);
        let plane = (w * h).div_ceil(8);
        let record = 8 + 48 + 2 * plane;
        let body = &bytes[ARCHIVE_HEADER_LEN..];
        if body.len() != count * record {
            return Err(FrameError::Truncated(format!(
                "{count} frames need {} bytes, found {}",
                count * record,
                body.len()
            )));
        }
        let mut frames = Vec::with_capacity(count);
        for rec in body.chunks_exact(record) {
            let t_center_us = u64::from_le_bytes(rec[0..8].try_into().unwrap());
            let mut v = [0.0; 6];
            for (k, slot) in v.iter_mut().enumerate() {
                let at = 8 + 8 * k;
                *slot = f64::from_le_bytes(rec[at..at + 8].try_into().unwrap());
            }
            let unpack = |raw: &[u8]| {
                let mut bits = BitVec::<u8, Lsb0>::from_slice(raw);
                bits.truncate(w * h);
                bits
            };
            let pos = unpack(&rec[56..56 + plane]);
            let neg = unpack(&rec[56 + plane..56 + 2 * plane]);
            frames.push(LabeledFrame {
                frame: BinaryFrame::from_planes(w, h, pos, neg)?,
                pose: Pose6D::from_array(v),
                t_center_us,
            });
        }
        Ok(Self {
            geometry,
            window_len_ms,
            frames,
        })
    }
}
