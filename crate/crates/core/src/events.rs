//! Event streams: the CSV and `SPKE` binary encodings, ordering, and the
//! uniform radiation-noise model.
//!
//! CSV layout is one event per line, `t_us,x,y,p` with `p` in `{0,1}`
//! (`0` = negative). An optional `# width,height` line sets the sensor
//! geometry; any other line starting with `#` is ignored.
//!
//! The binary layout is a 16-byte header (`SPKE`, version `u32`, width `u32`,
//! height `u32`) followed by 13-byte little-endian records
//! (`t_us u64`, `x u16`, `y u16`, `polarity u8`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

pub const BINARY_MAGIC: &[u8; 4] = b"SPKE";
pub const BINARY_VERSION: u32 = 1;
pub const BINARY_HEADER_LEN: usize = 16;
pub const BINARY_RECORD_LEN: usize = 13;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown polarity token `{token}`")]
    UnknownPolarity { line: usize, token: String },
    #[error("record {record}: pixel ({x},{y}) outside {width}x{height} sensor")]
    OutOfBounds {
        record: usize,
        x: u64,
        y: u64,
        width: u32,
        height: u32,
    },
    #[error("invalid sensor geometry {width}x{height}")]
    InvalidGeometry { width: u32, height: u32 },
    #[error("bad magic {0:?}, expected SPKE")]
    BadMagic([u8; 4]),
    #[error("unsupported SPKE version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("input is not valid UTF-8")]
    NotUtf8(#[from] std::str::Utf8Error),
    #[error("noise rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("cannot inject noise into an empty stream: duration is undefined")]
    EmptyStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t_us: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self {
            t_us,
            x,
            y,
            polarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
}

impl Default for SensorGeometry {
    /// The 640x480 sensor used for the real-event recordings.
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
        }
    }
}

impl SensorGeometry {
    /// Coordinates are stored as `u16`, so each side is capped at 65536.
    pub fn new(width: u32, height: u32) -> Result<Self, EventError> {
        if width == 0 || height == 0 || width > 1 << 16 || height > 1 << 16 {
            return Err(EventError::InvalidGeometry { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: u64, y: u64) -> bool {
        x < self.width as u64 && y < self.height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub geometry: SensorGeometry,
    pub events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, rejecting any event outside the sensor.
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self, EventError> {
        for (i, e) in events.iter().enumerate() {
            if !geometry.contains(e.x as u64, e.y as u64) {
                return Err(out_of_bounds(i, e.x as u64, e.y as u64, geometry));
            }
        }
        Ok(Self { geometry, events })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t_us <= w[1].t_us)
    }

    /// `(min, max)` timestamp, independent of ordering.
    pub fn time_span(&self) -> Option<(u64, u64)> {
        let min = self.events.iter().map(|e| e.t_us).min()?;
        let max = self.events.iter().map(|e| e.t_us).max()?;
        Some((min, max))
    }
}

fn out_of_bounds(record: usize, x: u64, y: u64, g: SensorGeometry) -> EventError {
    EventError::OutOfBounds {
        record,
        x,
        y,
        width: g.width,
        height: g.height,
    }
}

/// Parses the CSV event format. `geometry` overrides any header line; with
/// neither, the default 640x480 sensor is assumed.
pub fn parse_csv(
    bytes: &[u8],
    geometry: Option<SensorGeometry>,
) -> Result<EventStream, EventError> {
    let text = std::str::from_utf8(bytes)?;
    let mut header_geometry = None;
    let mut raw = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if header_geometry.is_none() {
                header_geometry = parse_geometry_header(rest);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(EventError::Malformed {
                line: line_no,
                reason: format!("expected 4 fields `t_us,x,y,p`, found {}", fields.len()),
            });
        }
        let parse_u64 = |s: &str, what: &str| {
            s.parse::<u64>().map_err(|_| EventError::Malformed {
                line: line_no,
                reason: format!("invalid {what} `{s}`"),
            })
        };
        let t_us = parse_u64(fields[0], "timestamp")?;
        let x = parse_u64(fields[1], "x")?;
        let y = parse_u64(fields[2], "y")?;
        let polarity = match fields[3] {
            "0" => Polarity::Negative,
            "1" => Polarity::Positive,
            other => {
                return Err(EventError::UnknownPolarity {
                    line: line_no,
                    token: other.to_string(),
                })
            }
        };
        raw.push((line_no, t_us, x, y, polarity));
    }

    let geometry = match (geometry, header_geometry) {
        (Some(g), _) => g,
        (None, Some(g)) => g?,
        (None, None) => SensorGeometry::default(),
    };
    let mut events = Vec::with_capacity(raw.len());
    for (line_no, t_us, x, y, polarity) in raw {
        if !geometry.contains(x, y) {
            return Err(out_of_bounds(line_no, x, y, geometry));
        }
        events.push(Event::new(t_us, x as u16, y as u16, polarity));
    }
    Ok(EventStream { geometry, events })
}

fn parse_geometry_header(rest: &str) -> Option<Result<SensorGeometry, EventError>> {
    let mut parts = rest.split(',').map(str::trim);
    let w = parts.next()?.parse::<u32>().ok()?;
    let h = parts.next()?.parse::<u32>().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(SensorGeometry::new(w, h))
}

pub fn write_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 + stream.len() * 16);
    out.push_str(&format!(
        "# {},{}\n",
        stream.geometry.width, stream.geometry.height
    ));
    for e in &stream.events {
        out.push_str(&format!("{},{},{},{}\n", e.t_us, e.x, e.y, e.polarity.bit()));
    }
    out
}

pub fn write_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + stream.len() * BINARY_RECORD_LEN);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.geometry.width.to_le_bytes());
    out.extend_from_slice(&stream.geometry.height.to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t_us.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity.bit());
    }
    out
}

pub fn read_binary(bytes: &[u8]) -> Result<EventStream, EventError> {
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(EventError::Truncated(format!(
            "header needs {BINARY_HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != BINARY_MAGIC {
        return Err(EventError::BadMagic(magic));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != BINARY_VERSION {
        return Err(EventError::UnsupportedVersion(version));
    }
    let geometry = SensorGeometry::new(word(8), word(12))?;

    let body = &bytes[BINARY_HEADER_LEN..];
    if body.len() % BINARY_RECORD_LEN != 0 {
        return Err(EventError::Truncated(format!(
            "record {} is {} of {BINARY_RECORD_LEN} bytes",
            body.len() / BINARY_RECORD_LEN,
            body.len() % BINARY_RECORD_LEN
        )));
    }
    let mut events = Vec::with_capacity(body.len() / BINARY_RECORD_LEN);
    for (i, rec) in body.chunks_exact(BINARY_RECORD_LEN).enumerate() {
        let t_us = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let polarity = Polarity::from_bit(rec[12]).ok_or_else(|| EventError::UnknownPolarity {
            line: i,
            token: rec[12].to_string(),
        })?;
        if !geometry.contains(x as u64, y as u64) {
            return Err(out_of_bounds(i, x as u64, y as u64, geometry));
        }
        events.push(Event::new(t_us, x, y, polarity));
    }
    Ok(EventStream { geometry, events })
}

/// Reads either encoding, dispatching on the `SPKE` magic.
pub fn read_any(bytes: &[u8], geometry: Option<SensorGeometry>) -> Result<EventStream, EventError> {
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(bytes)
    } else {
        parse_csv(bytes, geometry)
    }
}

/// Stable sort by timestamp; events sharing a timestamp keep input order.
pub fn validate_sort(stream: &EventStream) -> EventStream {
    let mut events = stream.events.clone();
    events.sort_by_key(|e| e.t_us);
    EventStream {
        geometry: stream.geometry,
        events,
    }
}

/// Draws `Poisson(rate * duration)` spurious events uniformly over the
/// sensor and over `[t_min, t_max]`, with uniform polarity.
pub fn uniform_noise_events(
    geometry: SensorGeometry,
    t_min: u64,
    t_max: u64,
    rate_events_per_sec: f64,
    seed: u64,
) -> Result<Vec<Event>, EventError> {
    if !rate_events_per_sec.is_finite() || rate_events_per_sec < 0.0 {
        return Err(EventError::InvalidRate(rate_events_per_sec));
    }
    let duration_s = t_max.saturating_sub(t_min) as f64 * 1e-6;
    let lambda = rate_events_per_sec * duration_s;
    if lambda <= 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = Poisson::new(lambda)
        .map_err(|_| EventError::InvalidRate(rate_events_per_sec))?
        .sample(&mut rng) as usize;
    let mut events = Vec::with_capacity(count);
    for _ in 0..count {
        let t_us = rng.random_range(t_min..=t_max);
        let x = rng.random_range(0..geometry.width) as u16;
        let y = rng.random_range(0..geometry.height) as u16;
        let polarity = if rng.random::<bool>() {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        events.push(Event::new(t_us, x, y, polarity));
    }
    Ok(events)
}

/// Adds uniform noise over the stream's own time span and re-sorts.
/// A zero rate returns the stream unchanged.
pub fn inject_uniform_noise(
    stream: &EventStream,
    rate_events_per_sec: f64,
    seed: u64,
) -> Result<EventStream, EventError> {
    if !rate_events_per_sec.is_finite() || rate_events_per_sec < 0.0 {
        return Err(EventError::InvalidRate(rate_events_per_sec));
    }
    if rate_events_per_sec == 0.0 {
        return Ok(stream.clone());
    }
    let (t_min, t_max) = stream.time_span().ok_or(EventError::EmptyStream)?;
    let noise = uniform_noise_events(stream.geometry, t_min, t_max, rate_events_per_sec, seed)?;
    let mut events = stream.events.clone();
    events.extend(noise);
    events.sort_by_key(|e| e.t_us);
    Ok(EventStream {
        geometry: stream.geometry,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vga() -> Option<SensorGeometry> {
        Some(SensorGeometry::default())
    }

    #[test]
    fn csv_field_mapping() {
        let s = parse_csv(b"1000,3,2,1\n0,0,0,0\n", vga()).unwrap();
        assert_eq!(s.events[0], Event::new(1000, 3, 2, Polarity::Positive));
        assert_eq!(s.events[1], Event::new(0, 0, 0, Polarity::Negative));
    }

    #[test]
    fn csv_out_of_bounds() {
        let err = parse_csv(b"5,700,10,1\n", vga()).unwrap_err();
        assert!(matches!(err, EventError::OutOfBounds { x: 700, record: 1, .. }), "{err}");
    }

    #[test]
    fn csv_reports_line_numbers() {
        let err = parse_csv(b"# 8,8\n1,1,1,1\n2,1,1\n", None).unwrap_err();
        assert!(matches!(err, EventError::Malformed { line: 3, .. }), "{err}");
        let err = parse_csv(b"1,1,1,1\n2,1,1,-1\n", None).unwrap_err();
        assert!(matches!(err, EventError::UnknownPolarity { line: 2, .. }), "{err}");
        let err = parse_csv(b"x,1,1,1\n", None).unwrap_err();
        assert!(matches!(err, EventError::Malformed { line: 1, .. }));
    }

    #[test]
    fn csv_header_geometry_and_override() {
        let s = parse_csv(b"# 4,3\n1,3,2,0\n", None).unwrap();
        assert_eq!(s.geometry, SensorGeometry::new(4, 3).unwrap());
        assert!(parse_csv(b"# 4,3\n1,4,2,0\n", None).is_err());
        let s = parse_csv(b"# 4,3\n1,9,2,0\n", Some(SensorGeometry::new(16, 16).unwrap())).unwrap();
        assert_eq!(s.geometry.width, 16);
    }

    #[test]
    fn csv_round_trip() {
        let s = parse_csv(b"# 10,10\n5,1,2,1\n7,9,9,0\n", None).unwrap();
        assert_eq!(parse_csv(write_csv(&s).as_bytes(), None).unwrap(), s);
    }

    #[test]
    fn binary_sizes() {
        let g = SensorGeometry::default();
        assert_eq!(write_binary(&EventStream::empty(g)).len(), 16);
        let one = EventStream::new(g, vec![Event::new(1, 2, 3, Polarity::Positive)]).unwrap();
        assert_eq!(write_binary(&one).len(), 29);
    }

    #[test]
    fn binary_errors() {
        let g = SensorGeometry::new(4, 4).unwrap();
        let one = EventStream::new(g, vec![Event::new(1, 2, 3, Polarity::Positive)]).unwrap();
        let mut bytes = write_binary(&one);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_binary(&bad), Err(EventError::BadMagic(_))));
        assert!(matches!(read_binary(&bytes[..20]), Err(EventError::Truncated(_))));
        assert!(matches!(read_binary(&bytes[..10]), Err(EventError::Truncated(_))));
        // x = 7 on a 4-wide sensor
        bytes[24] = 7;
        assert!(matches!(read_binary(&bytes), Err(EventError::OutOfBounds { .. })));
    }

    #[test]
    fn sort_is_stable() {
        let g = SensorGeometry::default();
        let events = vec![
            Event::new(5, 0, 0, Polarity::Positive),
            Event::new(3, 1, 0, Polarity::Positive),
            Event::new(4, 2, 0, Polarity::Negative),
            Event::new(3, 3, 0, Polarity::Negative),
        ];
        let sorted = validate_sort(&EventStream::new(g, events).unwrap());
        let ts: Vec<u64> = sorted.events.iter().map(|e| e.t_us).collect();
        assert_eq!(ts, vec![3, 3, 4, 5]);
        assert_eq!(sorted.events[0].x, 1);
        assert_eq!(sorted.events[1].x, 3);
        assert_eq!(validate_sort(&sorted), sorted);
    }

    #[test]
    fn zero_rate_is_identity() {
        let s = parse_csv(b"9,1,1,1\n2,3,3,0\n", vga()).unwrap();
        assert_eq!(inject_uniform_noise(&s, 0.0, 7).unwrap(), s);
    }

    #[test]
    fn noise_rejects_empty_and_negative() {
        let empty = EventStream::empty(SensorGeometry::default());
        assert!(matches!(inject_uniform_noise(&empty, 10.0, 1), Err(EventError::EmptyStream)));
        assert_eq!(inject_uniform_noise(&empty, 0.0, 1).unwrap(), empty);
        let s = parse_csv(b"0,1,1,1\n", vga()).unwrap();
        assert!(matches!(inject_uniform_noise(&s, -1.0, 1), Err(EventError::InvalidRate(_))));
        assert!(inject_uniform_noise(&s, f64::NAN, 1).is_err());
    }

    #[test]
    fn noise_is_deterministic_and_sorted() {
        let s = parse_csv(b"0,1,1,1\n1000000,2,2,0\n", vga()).unwrap();
        let a = inject_uniform_noise(&s, 500.0, 42).unwrap();
        let b = inject_uniform_noise(&s, 500.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.is_sorted());
        assert!(a.len() > s.len());
        assert_ne!(a, inject_uniform_noise(&s, 500.0, 43).unwrap());
    }
}
