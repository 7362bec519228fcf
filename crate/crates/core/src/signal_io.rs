//! Sensor stream parsing, validation and grid regularization.
//!
//! Wrist streams are CSV files with header `t_ms,red,ir,ax,ay,az,gx,gy,gz`,
//! fingertip streams carry only `t_ms,red,ir`. A JSON sidecar next to the
//! stream (same path, `.meta` extension) holds the sample rate, measurement
//! site, subject id and skin tone.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WRIST_HEADER: [&str; 9] = ["t_ms", "red", "ir", "ax", "ay", "az", "gx", "gy", "gz"];
pub const FINGERTIP_HEADER: [&str; 3] = ["t_ms", "red", "ir"];

/// Missing-slot runs longer than this many sample periods are long dropouts.
pub const LONG_GAP_PERIODS: usize = 5;

/// Fraction of out-of-order rows above which a capture is considered corrupt.
const MAX_OUT_OF_ORDER_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },
    #[error("{out_of_order} of {rows} rows are out of timestamp order")]
    NonMonotonicBeyondTolerance { out_of_order: usize, rows: usize },
    #[error("stream has fewer than two usable samples")]
    EmptyStream,
    #[error("invalid metadata: {0}")]
    InvalidMeta(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Wrist,
    Fingertip,
}

impl StreamKind {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            StreamKind::Wrist => &WRIST_HEADER,
            StreamKind::Fingertip => &FINGERTIP_HEADER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    WristTop,
    WristBottom,
    Fingertip,
}

impl Site {
    pub fn as_str(self) -> &'static str {
        match self {
            Site::WristTop => "wrist_top",
            Site::WristBottom => "wrist_bottom",
            Site::Fingertip => "fingertip",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wrist_top" => Ok(Site::WristTop),
            "wrist_bottom" => Ok(Site::WristBottom),
            "fingertip" => Ok(Site::Fingertip),
            other => Err(format!("unknown site `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkinTone {
    Light,
    Medium,
    Dark,
    Unknown,
}

impl SkinTone {
    pub fn as_str(self) -> &'static str {
        match self {
            SkinTone::Light => "light",
            SkinTone::Medium => "medium",
            SkinTone::Dark => "dark",
            SkinTone::Unknown => "unknown",
        }
    }
}

impl fmt::Display for SkinTone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sidecar metadata of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    #[serde(rename = "rate_hz", default = "default_rate")]
    pub nominal_rate_hz: f64,
    pub site: Site,
    pub subject_id: String,
    #[serde(default = "default_tone")]
    pub skin_tone: SkinTone,
}

fn default_rate() -> f64 {
    25.0
}

fn default_tone() -> SkinTone {
    SkinTone::Unknown
}

impl StreamMeta {
    pub fn new(subject_id: impl Into<String>, site: Site) -> Self {
        Self {
            nominal_rate_hz: default_rate(),
            site,
            subject_id: subject_id.into(),
            skin_tone: SkinTone::Unknown,
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.nominal_rate_hz.is_finite() && self.nominal_rate_hz > 0.0) {
            return Err(SignalError::InvalidMeta(format!(
                "rate_hz must be positive, got {}",
                self.nominal_rate_hz
            )));
        }
        Ok(())
    }

    /// Sample period in milliseconds.
    pub fn period_ms(&self) -> f64 {
        1000.0 / self.nominal_rate_hz
    }
}

/// Accelerometer and gyroscope triples of one wrist sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

/// One validated CSV row. Fingertip rows have no IMU part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub t_ms: i64,
    pub red: f64,
    pub ir: f64,
    pub imu: Option<ImuSample>,
}

/// One timestamped sample with IMU triples reduced to magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub t_ms: i64,
    pub red: f64,
    pub ir: f64,
    pub accel_mag: f64,
    pub gyro_mag: f64,
}

#[derive(Debug, Clone)]
pub struct ParsedStream {
    pub records: Vec<RawRecord>,
    pub meta: StreamMeta,
    /// Rows skipped because a field was missing, non-numeric or out of range.
    pub dropped: usize,
}

/// Path of the metadata sidecar belonging to a stream file.
pub fn meta_path(stream: &Path) -> PathBuf {
    stream.with_extension("meta")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SignalError + '_ {
    move |source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a stream CSV and its sidecar (or defaults when the sidecar is absent).
pub fn parse_stream(path: &Path, kind: StreamKind) -> Result<ParsedStream, SignalError> {
    let file = File::open(path).map_err(io_err(path))?;
    let (records, dropped) = read_records(file, kind)?;
    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        read_meta(&meta_file)?
    } else {
        let subject = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let site = match kind {
            StreamKind::Wrist => Site::WristTop,
            StreamKind::Fingertip => Site::Fingertip,
        };
        StreamMeta::new(subject, site)
    };
    Ok(ParsedStream {
        records,
        meta,
        dropped,
    })
}

pub fn read_meta(path: &Path) -> Result<StreamMeta, SignalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let meta: StreamMeta =
        serde_json::from_str(&text).map_err(|e| SignalError::InvalidMeta(e.to_string()))?;
    meta.validate()?;
    Ok(meta)
}

pub fn write_meta(path: &Path, meta: &StreamMeta) -> Result<(), SignalError> {
    let text =
        serde_json::to_string_pretty(meta).map_err(|e| SignalError::InvalidMeta(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Parses CSV text into sorted, de-duplicated records.
///
/// Returns the records and the number of rows dropped as malformed.
pub fn read_records<R: Read>(
    reader: R,
    kind: StreamKind,
) -> Result<(Vec<RawRecord>, usize), SignalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let expected = kind.header();
    let header = rdr.headers()?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(SignalError::MalformedHeader {
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut records = Vec::new();
    let mut dropped = 0usize;
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(true) => match parse_row(&row, kind) {
                Some(rec) => records.push(rec),
                None => dropped += 1,
            },
            Ok(false) => break,
            // Invalid UTF-8 and similar row-level failures count as malformed rows.
            Err(e) if !matches!(e.kind(), csv::ErrorKind::Io(_)) => dropped += 1,
            Err(e) => return Err(e.into()),
        }
    }

    let out_of_order = records.windows(2).filter(|w| w[1].t_ms < w[0].t_ms).count();
    if out_of_order as f64 > MAX_OUT_OF_ORDER_FRACTION * records.len() as f64 {
        return Err(SignalError::NonMonotonicBeyondTolerance {
            out_of_order,
            rows: records.len(),
        });
    }
    // Stable sort keeps capture order among equal timestamps; the last one wins.
    records.sort_by_key(|r| r.t_ms);
    let mut deduped: Vec<RawRecord> = Vec::with_capacity(records.len());
    for rec in records {
        match deduped.last_mut() {
            Some(last) if last.t_ms == rec.t_ms => *last = rec,
            _ => deduped.push(rec),
        }
    }
    Ok((deduped, dropped))
}

fn parse_row(row: &csv::StringRecord, kind: StreamKind) -> Option<RawRecord> {
    if row.len() != kind.header().len() {
        return None;
    }
    let t_ms: i64 = row.get(0)?.parse().ok()?;
    let real = |i: usize| -> Option<f64> {
        let v: f64 = row.get(i)?.parse().ok()?;
        v.is_finite().then_some(v)
    };
    let red = real(1)?;
    let ir = real(2)?;
    if red < 0.0 || ir < 0.0 {
        return None;
    }
    let imu = match kind {
        StreamKind::Wrist => Some(ImuSample {
            accel: [real(3)?, real(4)?, real(5)?],
            gyro: [real(6)?, real(7)?, real(8)?],
        }),
        StreamKind::Fingertip => None,
    };
    Some(RawRecord { t_ms, red, ir, imu })
}

/// Writes records in the CSV layout for `kind`. Reals use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_records<W: Write>(
    writer: W,
    records: &[RawRecord],
    kind: StreamKind,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{}", kind.header().join(","))?;
    for r in records {
        write!(w, "{},{},{}", r.t_ms, r.red, r.ir)?;
        if kind == StreamKind::Wrist {
            let imu = r.imu.unwrap_or(ImuSample {
                accel: [0.0; 3],
                gyro: [0.0; 3],
            });
            let [ax, ay, az] = imu.accel;
            let [gx, gy, gz] = imu.gyro;
            write!(w, ",{ax},{ay},{az},{gx},{gy},{gz}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_stream(
    path: &Path,
    records: &[RawRecord],
    kind: StreamKind,
    meta: &StreamMeta,
) -> Result<(), SignalError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_records(file, records, kind).map_err(io_err(path))?;
    write_meta(&meta_path(path), meta)
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Reduces IMU triples to Euclidean magnitudes. Fingertip records get zeros.
pub fn to_frames(records: &[RawRecord]) -> Vec<SensorFrame> {
    records
        .iter()
        .map(|r| {
            let (accel_mag, gyro_mag) = match r.imu {
                Some(imu) => (norm3(imu.accel), norm3(imu.gyro)),
                None => (0.0, 0.0),
            };
            SensorFrame {
                t_ms: r.t_ms,
                red: r.red,
                ir: r.ir,
                accel_mag,
                gyro_mag,
            }
        })
        .collect()
}

/// A run of consecutive empty grid slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapMarker {
    pub start: usize,
    pub len: usize,
}

impl GapMarker {
    /// True when the dropout spans more than [`LONG_GAP_PERIODS`] periods.
    pub fn is_long(&self) -> bool {
        self.len > LONG_GAP_PERIODS
    }
}

/// One grid slot of a regularized stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Frame(SensorFrame),
    Gap { t_ms: i64 },
}

/// A stream on a uniform `1/rate` grid, stored column-wise.
///
/// Empty slots hold zeros in the value columns and are flagged in `present`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularStream {
    pub meta: StreamMeta,
    t_ms: Vec<i64>,
    red: Vec<f64>,
    ir: Vec<f64>,
    accel_mag: Vec<f64>,
    gyro_mag: Vec<f64>,
    present: Vec<bool>,
    gaps_before: Vec<u32>,
}

fn grid_time(t0: i64, k: usize, period_ms: f64) -> i64 {
    t0 + (k as f64 * period_ms).round() as i64
}

/// Places frames on the uniform grid `t0 + k·period`, `t0` being the first
/// frame's timestamp.
///
/// Each frame lands in its nearest slot; when two frames compete for a slot
/// the closer one wins (earlier on ties). Slots no frame reaches stay empty
/// and surface as gap markers; values are never interpolated.
pub fn regularize(frames: &[SensorFrame], meta: &StreamMeta) -> Result<RegularStream, SignalError> {
    meta.validate()?;
    if frames.len() < 2 {
        return Err(SignalError::EmptyStream);
    }
    let period = meta.period_ms();
    let t0 = frames[0].t_ms;
    let slot_of = |t: i64| ((t - t0) as f64 / period).round().max(0.0) as usize;
    let n = slot_of(frames[frames.len() - 1].t_ms) + 1;

    let mut chosen: Vec<Option<(f64, SensorFrame)>> = vec![None; n];
    for f in frames {
        let k = slot_of(f.t_ms);
        if k >= n {
            continue;
        }
        let dist = (f.t_ms - grid_time(t0, k, period)).abs() as f64;
        match chosen[k] {
            Some((d, _)) if d <= dist => {}
            _ => chosen[k] = Some((dist, *f)),
        }
    }

    let mut s = RegularStream::with_capacity(meta.clone(), n);
    for (k, slot) in chosen.into_iter().enumerate() {
        let t = grid_time(t0, k, period);
        match slot {
            Some((_, f)) => s.push(t, Some((f.red, f.ir, f.accel_mag, f.gyro_mag))),
            None => s.push(t, None),
        }
    }
    Ok(s)
}

impl RegularStream {
    fn with_capacity(meta: StreamMeta, n: usize) -> Self {
        Self {
            meta,
            t_ms: Vec::with_capacity(n),
            red: Vec::with_capacity(n),
            ir: Vec::with_capacity(n),
            accel_mag: Vec::with_capacity(n),
            gyro_mag: Vec::with_capacity(n),
            present: Vec::with_capacity(n),
            gaps_before: {
                let mut v = Vec::with_capacity(n + 1);
                v.push(0);
                v
            },
        }
    }

    fn push(&mut self, t: i64, values: Option<(f64, f64, f64, f64)>) {
        let (r, i, a, g) = values.unwrap_or((0.0, 0.0, 0.0, 0.0));
        self.t_ms.push(t);
        self.red.push(r);
        self.ir.push(i);
        self.accel_mag.push(a);
        self.gyro_mag.push(g);
        self.present.push(values.is_some());
        let prev = *self.gaps_before.last().unwrap_or(&0);
        self.gaps_before.push(prev + u32::from(values.is_none()));
    }

    /// Builds a gap-free stream from frames already on the grid.
    pub fn from_uniform_frames(frames: &[SensorFrame], meta: StreamMeta) -> Self {
        let mut s = Self::with_capacity(meta, frames.len());
        for f in frames {
            s.push(f.t_ms, Some((f.red, f.ir, f.accel_mag, f.gyro_mag)));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.t_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ms.is_empty()
    }

    pub fn rate_hz(&self) -> f64 {
        self.meta.nominal_rate_hz
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.t_ms
    }

    pub fn red(&self) -> &[f64] {
        &self.red
    }

    pub fn ir(&self) -> &[f64] {
        &self.ir
    }

    pub fn accel_mag(&self) -> &[f64] {
        &self.accel_mag
    }

    pub fn gyro_mag(&self) -> &[f64] {
        &self.gyro_mag
    }

    pub fn is_present(&self, i: usize) -> bool {
        self.present[i]
    }

    /// Number of empty slots in `start..start + len`.
    pub fn gaps_in(&self, start: usize, len: usize) -> usize {
        (self.gaps_before[start + len] - self.gaps_before[start]) as usize
    }

    pub fn slot(&self, i: usize) -> Slot {
        if self.present[i] {
            Slot::Frame(SensorFrame {
                t_ms: self.t_ms[i],
                red: self.red[i],
                ir: self.ir[i],
                accel_mag: self.accel_mag[i],
                gyro_mag: self.gyro_mag[i],
            })
        } else {
            Slot::Gap { t_ms: self.t_ms[i] }
        }
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.len()).map(|i| self.slot(i))
    }

    /// The present samples, in order.
    pub fn frames(&self) -> Vec<SensorFrame> {
        self.slots()
            .filter_map(|s| match s {
                Slot::Frame(f) => Some(f),
                Slot::Gap { .. } => None,
            })
            .collect()
    }

    pub fn gap_markers(&self) -> Vec<GapMarker> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.len() {
            if !self.present[i] {
                let start = i;
                while i < self.len() && !self.present[i] {
                    i += 1;
                }
                out.push(GapMarker {
                    start,
                    len: i - start,
                });
            } else {
                i += 1;
            }
        }
        out
    }

    /// First and last grid timestamps.
    pub fn span_ms(&self) -> (i64, i64) {
        match (self.t_ms.first(), self.t_ms.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (0, 0),
        }
    }
}

/// Parses, converts and regularizes a stream file in one go.
pub fn load_regular(path: &Path, kind: StreamKind) -> Result<(RegularStream, usize), SignalError> {
    let parsed = parse_stream(path, kind)?;
    let frames = to_frames(&parsed.records);
    Ok((regularize(&frames, &parsed.meta)?, parsed.dropped))
}
