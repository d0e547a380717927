//! 6D poses and the `pose_track v1` CSV file.

use thiserror::Error;

pub const POSE_TRACK_HEADER: &str = "# pose_track v1";

/// Translation in meters and a rotation vector (axis times angle) in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose6D {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

impl Pose6D {
    pub fn new(translation: [f64; 3], rotation: [f64; 3]) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    /// `[x, y, z, rx, ry, rz]`
    pub fn to_array(&self) -> [f64; 6] {
        let [x, y, z] = self.translation;
        let [rx, ry, rz] = self.rotation;
        [x, y, z, rx, ry, rz]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t_us: u64,
    pub pose: Pose6D,
}

#[derive(Debug, Error)]
pub enum PoseTrackError {
    #[error("missing `{POSE_TRACK_HEADER}` header")]
    MissingHeader,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("pose track is not valid UTF-8")]
    NotUtf8(#[from] std::str::Utf8Error),
}

pub fn parse_pose_track(bytes: &[u8]) -> Result<Vec<TimedPose>, PoseTrackError> {
    let text = std::str::from_utf8(bytes)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == POSE_TRACK_HEADER => {}
        _ => return Err(PoseTrackError::MissingHeader),
    }
    let mut poses = Vec::new();
    for (line, l) in lines {
        if l.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(PoseTrackError::Malformed {
                line,
                reason: format!("expected 7 fields `t_us,x,y,z,rx,ry,rz`, found {}", fields.len()),
            });
        }
        let t_us = fields[0].parse::<u64>().map_err(|_| PoseTrackError::Malformed {
            line,
            reason: format!("invalid timestamp `{}`", fields[0]),
        })?;
        let mut v = [0.0; 6];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| PoseTrackError::Malformed {
                    line,
                    reason: format!("invalid pose component `{f}`"),
                })?;
        }
        poses.push(TimedPose {
            t_us,
            pose: Pose6D::from_array(v),
        });
    }
    Ok(poses)
}

/// Writes with shortest round-trip float formatting.
pub fn write_pose_track(track: &[TimedPose]) -> String {
    let mut out = String::from(POSE_TRACK_HEADER);
    out.push('\n');
    for p in track {
        let v = p.pose.to_array();
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            p.t_us, v[0], v[1], v[2], v[3], v[4], v[5]
        ));
    }
    out
}
