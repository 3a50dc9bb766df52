//! Channel model of the 16-optode headband and the raw / label CSV formats.
//!
//! A raw row is `t_s` followed by one `(730, 850, dark)` triplet per long
//! channel and then one triplet per reference (short-separation) channel.
//! Label files carry `start_s,end_s,label` rows; gaps between intervals are
//! dead bands and are never labeled.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 4.0;
pub const DEFAULT_SATURATION_CEILING: f64 = 4095.0;
/// Allowed deviation of frame spacing from `1 / sampling_rate_hz`.
pub const TIME_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("invalid channel layout: {0}")]
    InvalidLayout(String),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("non-monotonic time at row {row}: {prev} -> {t}")]
    NonMonotonicTime { row: usize, prev: f64, t: f64 },
    #[error("irregular sampling at row {row}: spacing {spacing} s, expected {expected} s")]
    IrregularSampling { row: usize, spacing: f64, expected: f64 },
    #[error("negative intensity at row {row}, column `{column}`: {value}")]
    NegativeIntensity { row: usize, column: String, value: f64 },
    #[error("non-finite intensity at row {row}, column `{column}`")]
    NonFiniteIntensity { row: usize, column: String },
    #[error("frame {row} does not match the channel layout")]
    LayoutMismatch { row: usize },
    #[error("sampling rate must be positive and finite, got {0}")]
    InvalidSamplingRate(f64),
    #[error("intervals {first} and {second} overlap")]
    OverlappingIntervals { first: usize, second: usize },
    #[error("interval {row} is inverted: end {end_s} <= start {start_s}")]
    InvertedInterval { row: usize, start_s: f64, end_s: f64 },
    #[error("row {row}: label `{label}` is not a class index in [0, {n_classes})")]
    UnknownLabelIndex { row: usize, label: String, n_classes: usize },
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        IngestError::Csv(e.to_string())
    }
}

/// Long channels and the reference channel each one is corrected against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    n_long: usize,
    n_reference: usize,
    reference_assignment: Vec<usize>,
}

impl ChannelLayout {
    pub fn new(
        n_long: usize,
        n_reference: usize,
        reference_assignment: Vec<usize>,
    ) -> Result<Self, IngestError> {
        if n_long == 0 || n_reference == 0 {
            return Err(IngestError::InvalidLayout(
                "need at least one long and one reference channel".into(),
            ));
        }
        if reference_assignment.len() != n_long {
            return Err(IngestError::InvalidLayout(format!(
                "assignment covers {} channels, layout has {}",
                reference_assignment.len(),
                n_long
            )));
        }
        if let Some(bad) = reference_assignment.iter().find(|&&r| r >= n_reference) {
            return Err(IngestError::InvalidLayout(format!(
                "reference index {bad} out of range"
            )));
        }
        Ok(Self {
            n_long,
            n_reference,
            reference_assignment,
        })
    }

    /// Contiguous blocks of long channels share the nearest reference
    /// channel (16 long / 2 ref: channels 0-7 -> 0, 8-15 -> 1).
    pub fn nearest(n_long: usize, n_reference: usize) -> Result<Self, IngestError> {
        let assignment = (0..n_long).map(|c| c * n_reference / n_long.max(1)).collect();
        Self::new(n_long, n_reference, assignment)
    }

    pub fn n_long(&self) -> usize {
        self.n_long
    }

    pub fn n_reference(&self) -> usize {
        self.n_reference
    }

    pub fn reference_of(&self, long_channel: usize) -> usize {
        self.reference_assignment[long_channel]
    }

    pub fn reference_assignment(&self) -> &[usize] {
        &self.reference_assignment
    }

    /// Number of CSV columns including `t_s`.
    pub fn n_columns(&self) -> usize {
        1 + 3 * (self.n_long + self.n_reference)
    }
}

impl Default for ChannelLayout {
    fn default() -> Self {
        Self::nearest(16, 2).expect("default layout is valid")
    }
}

/// One reading of an emitter/detector pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Triplet {
    pub i730: f64,
    pub i850: f64,
    pub dark: f64,
}

impl Triplet {
    pub fn new(i730: f64, i850: f64, dark: f64) -> Self {
        Self { i730, i850, dark }
    }

    fn values(&self) -> [f64; 3] {
        [self.i730, self.i850, self.dark]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub t: f64,
    pub long: Vec<Triplet>,
    pub reference: Vec<Triplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub subject_id: String,
    pub sampling_rate_hz: f64,
    pub layout: ChannelLayout,
    pub frames: Vec<RawFrame>,
}

impl RawRecording {
    /// Builds a recording and checks every invariant.
    pub fn new(
        subject_id: impl Into<String>,
        sampling_rate_hz: f64,
        layout: ChannelLayout,
        frames: Vec<RawFrame>,
    ) -> Result<Self, IngestError> {
        let rec = Self {
            subject_id: subject_id.into(),
            sampling_rate_hz,
            layout,
            frames,
        };
        rec.check()?;
        Ok(rec)
    }

    pub fn check(&self) -> Result<(), IngestError> {
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(IngestError::InvalidSamplingRate(self.sampling_rate_hz));
        }
        let header = raw_csv_header(&self.layout);
        let dt = 1.0 / self.sampling_rate_hz;
        for (row, frame) in self.frames.iter().enumerate() {
            if frame.long.len() != self.layout.n_long()
                || frame.reference.len() != self.layout.n_reference()
            {
                return Err(IngestError::LayoutMismatch { row });
            }
            let values = frame
                .long
                .iter()
                .chain(frame.reference.iter())
                .flat_map(Triplet::values);
            for (col, v) in values.enumerate() {
                check_intensity(row, &header[col + 1], v)?;
            }
            if row > 0 {
                check_spacing(row, self.frames[row - 1].t, frame.t, dt)?;
            }
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Covered time span: last timestamp plus one sample period.
    pub fn duration_s(&self) -> f64 {
        self.frames
            .last()
            .map(|f| f.t + 1.0 / self.sampling_rate_hz)
            .unwrap_or(0.0)
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }
}

fn check_intensity(row: usize, column: &str, v: f64) -> Result<(), IngestError> {
    if !v.is_finite() {
        return Err(IngestError::NonFiniteIntensity {
            row,
            column: column.to_string(),
        });
    }
    if v < 0.0 {
        return Err(IngestError::NegativeIntensity {
            row,
            column: column.to_string(),
            value: v,
        });
    }
    Ok(())
}

fn check_spacing(row: usize, prev: f64, t: f64, dt: f64) -> Result<(), IngestError> {
    if t <= prev {
        return Err(IngestError::NonMonotonicTime { row, prev, t });
    }
    let spacing = t - prev;
    if (spacing - dt).abs() > TIME_TOLERANCE_S {
        return Err(IngestError::IrregularSampling {
            row,
            spacing,
            expected: dt,
        });
    }
    Ok(())
}

/// Column names of the raw CSV for `layout`.
pub fn raw_csv_header(layout: &ChannelLayout) -> Vec<String> {
    let mut cols = Vec::with_capacity(layout.n_columns());
    cols.push("t_s".to_string());
    for c in 0..layout.n_long() {
        for suffix in ["730", "850", "dark"] {
            cols.push(format!("L{c}_{suffix}"));
        }
    }
    for r in 0..layout.n_reference() {
        for suffix in ["730", "850", "dark"] {
            cols.push(format!("R{r}_{suffix}"));
        }
    }
    cols
}

/// Options the raw CSV itself does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCsvOptions {
    pub subject_id: String,
    pub sampling_rate_hz: f64,
}

impl Default for RawCsvOptions {
    fn default() -> Self {
        Self {
            subject_id: String::new(),
            sampling_rate_hz: DEFAULT_SAMPLING_RATE_HZ,
        }
    }
}

/// Parses a raw recording. Data rows are indexed from 0 in errors.
pub fn parse_raw_csv<R: Read>(
    reader: R,
    layout: &ChannelLayout,
    opts: &RawCsvOptions,
) -> Result<RawRecording, IngestError> {
    if !(opts.sampling_rate_hz.is_finite() && opts.sampling_rate_hz > 0.0) {
        return Err(IngestError::InvalidSamplingRate(opts.sampling_rate_hz));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let expected = raw_csv_header(layout);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(IngestError::BadHeader {
            expected: expected.join(","),
            found: found.join(","),
        });
    }

    let dt = 1.0 / opts.sampling_rate_hz;
    let n_cols = layout.n_columns();
    let mut frames: Vec<RawFrame> = Vec::new();
    let mut values = vec![0.0; n_cols];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != n_cols {
            return Err(IngestError::MalformedRow {
                row,
                reason: format!("expected {n_cols} columns, found {}", record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            values[col] = field.parse::<f64>().map_err(|_| IngestError::MalformedRow {
                row,
                reason: format!("column `{}` is not numeric: `{field}`", expected[col]),
            })?;
        }
        let t = values[0];
        if !t.is_finite() {
            return Err(IngestError::MalformedRow {
                row,
                reason: "non-finite timestamp".into(),
            });
        }
        if let Some(prev) = frames.last() {
            check_spacing(row, prev.t, t, dt)?;
        }
        for col in 1..n_cols {
            check_intensity(row, &expected[col], values[col])?;
        }
        let triplet = |i: usize| Triplet::new(values[1 + 3 * i], values[2 + 3 * i], values[3 + 3 * i]);
        frames.push(RawFrame {
            t,
            long: (0..layout.n_long()).map(triplet).collect(),
            reference: (layout.n_long()..layout.n_long() + layout.n_reference())
                .map(triplet)
                .collect(),
        });
    }

    Ok(RawRecording {
        subject_id: opts.subject_id.clone(),
        sampling_rate_hz: opts.sampling_rate_hz,
        layout: layout.clone(),
        frames,
    })
}

/// Decimal text with at most 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn write_raw_csv<W: Write>(rec: &RawRecording, writer: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "{}", raw_csv_header(&rec.layout).join(","))?;
    let mut line = String::new();
    for frame in &rec.frames {
        line.clear();
        line.push_str(&format_sig9(frame.t));
        for tr in frame.long.iter().chain(frame.reference.iter()) {
            for v in tr.values() {
                line.push(',');
                line.push_str(&format_sig9(v));
            }
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub label: usize,
}

impl LabelInterval {
    pub fn new(start_s: f64, end_s: f64, label: usize) -> Self {
        Self {
            start_s,
            end_s,
            label,
        }
    }

    /// Half-open membership `[start, end)`.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }

    pub fn length_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTrack {
    intervals: Vec<LabelInterval>,
    n_classes: usize,
}

impl LabelTrack {
    /// Sorts the intervals by start and checks the invariants.
    pub fn new(mut intervals: Vec<LabelInterval>, n_classes: usize) -> Result<Self, IngestError> {
        for (row, iv) in intervals.iter().enumerate() {
            if !(iv.start_s.is_finite() && iv.end_s.is_finite()) || iv.end_s <= iv.start_s {
                return Err(IngestError::InvertedInterval {
                    row,
                    start_s: iv.start_s,
                    end_s: iv.end_s,
                });
            }
            if iv.label >= n_classes {
                return Err(IngestError::UnknownLabelIndex {
                    row,
                    label: iv.label.to_string(),
                    n_classes,
                });
            }
        }
        let mut order: Vec<usize> = (0..intervals.len()).collect();
        order.sort_by(|&a, &b| intervals[a].start_s.total_cmp(&intervals[b].start_s));
        for pair in order.windows(2) {
            if intervals[pair[1]].start_s < intervals[pair[0]].end_s {
                return Err(IngestError::OverlappingIntervals {
                    first: pair[0],
                    second: pair[1],
                });
            }
        }
        intervals.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        Ok(Self {
            intervals,
            n_classes,
        })
    }

    pub fn intervals(&self) -> &[LabelInterval] {
        &self.intervals
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Label of the interval covering `t`, if any.
    pub fn label_at(&self, t: f64) -> Option<usize> {
        let idx = self.intervals.partition_point(|iv| iv.start_s <= t);
        idx.checked_sub(1)
            .map(|i| self.intervals[i])
            .filter(|iv| iv.contains(t))
            .map(|iv| iv.label)
    }

    pub fn end_s(&self) -> f64 {
        self.intervals.iter().map(|iv| iv.end_s).fold(0.0, f64::max)
    }
}

/// Parses a label CSV. With `n_classes = None` the class count is one more
/// than the largest label seen. Negative labels are rejected: the baseline
/// period is simply left unlabeled.
pub fn parse_labels<R: Read>(reader: R, n_classes: Option<usize>) -> Result<LabelTrack, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["start_s", "end_s", "label"] {
        return Err(IngestError::BadHeader {
            expected: "start_s,end_s,label".into(),
            found: header.join(","),
        });
    }
    let mut intervals = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 3 {
            return Err(IngestError::MalformedRow {
                row,
                reason: format!("expected 3 columns, found {}", record.len()),
            });
        }
        let num = |i: usize| {
            record[i].parse::<f64>().map_err(|_| IngestError::MalformedRow {
                row,
                reason: format!("not numeric: `{}`", &record[i]),
            })
        };
        let (start_s, end_s) = (num(0)?, num(1)?);
        let label: usize = record[2].parse().map_err(|_| IngestError::UnknownLabelIndex {
            row,
            label: record[2].to_string(),
            n_classes: n_classes.unwrap_or(0),
        })?;
        intervals.push(LabelInterval::new(start_s, end_s, label));
    }
    let n = n_classes.unwrap_or_else(|| intervals.iter().map(|iv| iv.label + 1).max().unwrap_or(0));
    LabelTrack::new(intervals, n)
}

pub fn write_labels<W: Write>(track: &LabelTrack, writer: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "start_s,end_s,label")?;
    for iv in track.intervals() {
        writeln!(w, "{},{},{}", format_sig9(iv.start_s), format_sig9(iv.end_s), iv.label)?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    /// Minimum usable interval length, normally one filter warm-up.
    pub warmup_s: f64,
    pub saturation_ceiling: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            warmup_s: 100.0 / DEFAULT_SAMPLING_RATE_HZ,
            saturation_ceiling: DEFAULT_SATURATION_CEILING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    TrackExceedsRecording { track_end_s: f64, duration_s: f64 },
    IntervalShorterThanWarmup { interval: usize, length_s: f64, warmup_s: f64 },
    Saturated { samples: usize, first_frame: usize, max_value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TrackExceedsRecording {
                track_end_s,
                duration_s,
            } => write!(
                f,
                "track exceeds recording: ends at {track_end_s} s, recording covers {duration_s} s"
            ),
            Violation::IntervalShorterThanWarmup {
                interval,
                length_s,
                warmup_s,
            } => write!(
                f,
                "interval {interval} lasts {length_s} s, shorter than the {warmup_s} s filter warm-up"
            ),
            Violation::Saturated {
                samples,
                first_frame,
                max_value,
            } => write!(
                f,
                "{samples} saturated intensities (first at frame {first_frame}, max {max_value})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_usable(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports problems that make a recording unfit for the pipeline. Nothing
/// here is fatal; callers decide what to reject.
pub fn validate_recording(
    rec: &RawRecording,
    track: &LabelTrack,
    opts: &ValidationOptions,
) -> ValidationReport {
    let mut violations = Vec::new();
    let duration_s = rec.duration_s();
    let track_end_s = track.end_s();
    if track_end_s > duration_s + TIME_TOLERANCE_S {
        violations.push(Violation::TrackExceedsRecording {
            track_end_s,
            duration_s,
        });
    }
    for (i, iv) in track.intervals().iter().enumerate() {
        if iv.length_s() < opts.warmup_s {
            violations.push(Violation::IntervalShorterThanWarmup {
                interval: i,
                length_s: iv.length_s(),
                warmup_s: opts.warmup_s,
            });
        }
    }
    let mut samples = 0;
    let mut first_frame = None;
    let mut max_value = f64::NEG_INFINITY;
    for (k, frame) in rec.frames.iter().enumerate() {
        for v in frame.long.iter().chain(frame.reference.iter()).flat_map(Triplet::values) {
            if v > opts.saturation_ceiling {
                samples += 1;
                first_frame.get_or_insert(k);
                max_value = max_value.max(v);
            }
        }
    }
    if let Some(first_frame) = first_frame {
        violations.push(Violation::Saturated {
            samples,
            first_frame,
            max_value,
        });
    }
    ValidationReport { violations }
}
