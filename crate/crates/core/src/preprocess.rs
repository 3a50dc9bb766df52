//! Denoising chain: dark-current subtraction, zero-phase low-pass,
//! short-channel subtraction and baseline removal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ChannelLayout, RawRecording};
use crate::scalar::{mean, Scalar};

/// Floor applied to dark-corrected intensities so the log stays defined.
pub const INTENSITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("cutoff {cutoff_hz} Hz is not below Nyquist ({nyquist_hz} Hz)")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("cutoff must be positive, got {0}")]
    NonPositiveCutoff(f64),
    #[error("tap count must be odd and positive, got {0}")]
    EvenTapCount(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference channel {0} missing")]
    MissingReference(usize),
    #[error("baseline window [{start_s}, {end_s}) s selects no samples")]
    EmptyBaselineWindow { start_s: f64, end_s: f64 },
}

/// Two wavelength traces of one channel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelSeries<T> {
    pub w730: Vec<T>,
    pub w850: Vec<T>,
}

impl<T: Scalar> ChannelSeries<T> {
    pub fn len(&self) -> usize {
        self.w730.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w730.is_empty()
    }

    pub fn map(&self, mut f: impl FnMut(&[T]) -> Vec<T>) -> Self {
        Self {
            w730: f(&self.w730),
            w850: f(&self.w850),
        }
    }

    pub fn try_map<E>(&self, mut f: impl FnMut(&[T]) -> Result<Vec<T>, E>) -> Result<Self, E> {
        Ok(Self {
            w730: f(&self.w730)?,
            w850: f(&self.w850)?,
        })
    }
}

/// Dark-corrected intensities, long and reference channels kept apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySeries<T> {
    pub long: Vec<ChannelSeries<T>>,
    pub reference: Vec<ChannelSeries<T>>,
    pub sampling_rate_hz: f64,
    /// Number of samples raised to [`INTENSITY_FLOOR`].
    pub clamped: usize,
}

impl<T: Scalar> IntensitySeries<T> {
    pub fn len(&self) -> usize {
        self.long.first().map_or(0, ChannelSeries::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Subtracts the emitters-off reading from both wavelengths of every
/// channel. Results below [`INTENSITY_FLOOR`] are clamped and counted.
pub fn subtract_dark<T: Scalar>(raw: &RawRecording) -> IntensitySeries<T> {
    let n = raw.frames.len();
    let floor = T::lit(INTENSITY_FLOOR);
    let mut clamped = 0usize;
    let mut take = |values: &mut Vec<T>, v: f64| {
        let x = T::lit(v);
        if x < floor {
            clamped += 1;
            values.push(floor);
        } else {
            values.push(x);
        }
    };
    let mut build = |count: usize, pick: &dyn Fn(&crate::ingest::RawFrame, usize) -> crate::ingest::Triplet| {
        (0..count)
            .map(|c| {
                let mut s = ChannelSeries {
                    w730: Vec::with_capacity(n),
                    w850: Vec::with_capacity(n),
                };
                for frame in &raw.frames {
                    let tr = pick(frame, c);
                    take(&mut s.w730, tr.i730 - tr.dark);
                    take(&mut s.w850, tr.i850 - tr.dark);
                }
                s
            })
            .collect::<Vec<_>>()
    };
    let long = build(raw.layout.n_long(), &|f, c| f.long[c]);
    let reference = build(raw.layout.n_reference(), &|f, c| f.reference[c]);
    IntensitySeries {
        long,
        reference,
        sampling_rate_hz: raw.sampling_rate_hz,
        clamped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hamming,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hamming if n == 1 => vec![1.0],
            Window::Hamming => {
                let denom = (n - 1) as f64;
                (0..n)
                    .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub n_taps: usize,
    pub window: Window,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            cutoff_hz: 0.1,
            n_taps: 201,
            window: Window::Hamming,
        }
    }
}

impl FilterSpec {
    /// Samples at each end that the filter cannot see a full support for.
    pub fn half_length(&self) -> usize {
        (self.n_taps - 1) / 2
    }
}

/// Windowed-sinc linear-phase low-pass, normalized to unit DC gain.
pub fn design_lowpass<T: Scalar>(spec: &FilterSpec, fs_hz: f64) -> Result<Vec<T>, PreprocessError> {
    if spec.n_taps == 0 || spec.n_taps % 2 == 0 {
        return Err(PreprocessError::EvenTapCount(spec.n_taps));
    }
    if !(spec.cutoff_hz > 0.0) {
        return Err(PreprocessError::NonPositiveCutoff(spec.cutoff_hz));
    }
    let nyquist_hz = fs_hz / 2.0;
    if spec.cutoff_hz >= nyquist_hz {
        return Err(PreprocessError::CutoffAboveNyquist {
            cutoff_hz: spec.cutoff_hz,
            nyquist_hz,
        });
    }
    // normalized cutoff in cycles/sample, doubled
    let wc = 2.0 * spec.cutoff_hz / fs_hz;
    let centre = spec.half_length() as f64;
    let window = spec.window.coefficients(spec.n_taps);
    // evaluated on the left half and mirrored so the taps are exactly symmetric
    let raw: Vec<f64> = (0..spec.n_taps)
        .map(|i| {
            let i = i.min(spec.n_taps - 1 - i);
            let w = window[i];
            let x = i as f64 - centre;
            let sinc = if x == 0.0 {
                1.0
            } else {
                let a = std::f64::consts::PI * wc * x;
                a.sin() / a
            };
            wc * sinc * w
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|h| T::lit(h / sum)).collect())
}

/// Index into `0..n` under whole-sample mirror reflection about both ends
/// (`x[-1] = x[1]`, `x[n] = x[n-2]`).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let j = i.rem_euclid(period);
    if j < n as isize {
        j as usize
    } else {
        (period - j) as usize
    }
}

/// Zero-phase application of symmetric taps: the output at `k` is centred on
/// input `k`, with reflected samples standing in past either end.
pub fn lowpass_filter<T: Scalar>(x: &[T], taps: &[T]) -> Vec<T> {
    let n = x.len();
    if n == 0 || taps.is_empty() {
        return x.to_vec();
    }
    let half = (taps.len() / 2) as isize;
    let padded: Vec<T> = (-half..n as isize + half)
        .map(|i| x[reflect_index(i, n)])
        .collect();
    (0..n)
        .map(|k| {
            padded[k..k + taps.len()]
                .iter()
                .zip(taps)
                .fold(T::zero(), |acc, (&v, &h)| acc + v * h)
        })
        .collect()
}

/// `true` for samples within the filter half-length of either end.
pub fn warmup_flags(n: usize, n_taps: usize) -> Vec<bool> {
    let half = n_taps.saturating_sub(1) / 2;
    (0..n).map(|k| k < half || k + half >= n).collect()
}

/// Subtracts `coeff` times the assigned reference channel from every long
/// channel, wavelength by wavelength.
pub fn short_channel_correct<T: Scalar>(
    long: &[ChannelSeries<T>],
    reference: &[ChannelSeries<T>],
    layout: &ChannelLayout,
    coeff: T,
) -> Result<Vec<ChannelSeries<T>>, PreprocessError> {
    if long.len() != layout.n_long() {
        return Err(PreprocessError::LengthMismatch(long.len(), layout.n_long()));
    }
    long.iter()
        .enumerate()
        .map(|(c, l)| {
            let r_idx = layout.reference_of(c);
            let r = reference
                .get(r_idx)
                .ok_or(PreprocessError::MissingReference(r_idx))?;
            let sub = |a: &[T], b: &[T]| {
                if a.len() != b.len() {
                    return Err(PreprocessError::LengthMismatch(a.len(), b.len()));
                }
                Ok(a.iter().zip(b).map(|(&x, &y)| x - coeff * y).collect::<Vec<T>>())
            };
            Ok(ChannelSeries {
                w730: sub(&l.w730, &r.w730)?,
                w850: sub(&l.w850, &r.w850)?,
            })
        })
        .collect()
}

/// `[start_s, end_s)` on the recording clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl BaselineWindow {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    /// Sample index range covered by the window for a series starting at `t0`.
    pub fn index_range(&self, n: usize, fs_hz: f64, t0: f64) -> Result<std::ops::Range<usize>, PreprocessError> {
        let first = ((self.start_s - t0) * fs_hz - 1e-9).ceil().max(0.0) as usize;
        let last = ((self.end_s - t0) * fs_hz - 1e-9).ceil().max(0.0) as usize;
        let range = first.min(n)..last.min(n);
        if range.is_empty() {
            return Err(PreprocessError::EmptyBaselineWindow {
                start_s: self.start_s,
                end_s: self.end_s,
            });
        }
        Ok(range)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

impl Default for BaselineWindow {
    fn default() -> Self {
        Self::new(0.0, 120.0)
    }
}

pub fn baseline_mean<T: Scalar>(
    x: &[T],
    window: BaselineWindow,
    fs_hz: f64,
    t0: f64,
) -> Result<T, PreprocessError> {
    let range = window.index_range(x.len(), fs_hz, t0)?;
    Ok(mean(&x[range]))
}

/// Removes the mean over the baseline window from every sample.
pub fn baseline_correct<T: Scalar>(
    x: &[T],
    window: BaselineWindow,
    fs_hz: f64,
    t0: f64,
) -> Result<Vec<T>, PreprocessError> {
    let m = baseline_mean(x, window, fs_hz, t0)?;
    Ok(x.iter().map(|&v| v - m).collect())
}
