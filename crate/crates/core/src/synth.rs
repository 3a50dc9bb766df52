//! Synthetic recordings with known hemodynamic ground truth.
//!
//! The forward model mirrors the pipeline: chromophore changes plus
//! nuisance terms form an optical density per wavelength, intensities are
//! `I0 · 10^(-OD)`, and every reading carries the same dark current as its
//! dark column. Reference channels see only the superficial and systemic
//! terms, so short-channel subtraction removes them from the long channels.
//! In this model the 850 nm trace carries HbO and the 730 nm trace HbR.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::ingest::{ChannelLayout, LabelInterval, LabelTrack, RawFrame, RawRecording, Triplet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    ConfigInvalid(String),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::ConfigInvalid(msg.into())
}

/// Per-channel activation amplitudes of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub hbo: Vec<f64>,
    pub hbr: Vec<f64>,
    pub rise_time_s: f64,
}

impl ClassSignature {
    pub fn zeros(n_channels: usize, rise_time_s: f64) -> Self {
        Self {
            hbo: vec![0.0; n_channels],
            hbr: vec![0.0; n_channels],
            rise_time_s,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            hbo: self.hbo.iter().map(|v| v * k).collect(),
            hbr: self.hbr.iter().map(|v| v * k).collect(),
            rise_time_s: self.rise_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub heartbeat_hz: f64,
    pub heartbeat_amp: f64,
    pub respiration_hz: f64,
    pub respiration_amp: f64,
    pub mayer_hz: f64,
    pub mayer_amp: f64,
    /// Independent per-sample OD noise on every channel and wavelength.
    pub white_noise_sigma: f64,
    /// OD drift per second, shared by long and reference channels.
    pub drift_slope: f64,
    /// Stationary std of slow cortical fluctuations (long channels only).
    pub spontaneous_amp: f64,
    pub spontaneous_tau_s: f64,
    /// Std of the dark current around `dark_bias`.
    pub dark_noise_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            heartbeat_hz: 1.2,
            heartbeat_amp: 0.02,
            respiration_hz: 0.25,
            respiration_amp: 0.02,
            mayer_hz: 0.1,
            mayer_amp: 0.01,
            white_noise_sigma: 0.005,
            drift_slope: 1e-5,
            spontaneous_amp: 0.005,
            spontaneous_tau_s: 20.0,
            dark_noise_sigma: 2.0,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self {
            heartbeat_amp: 0.0,
            respiration_amp: 0.0,
            mayer_amp: 0.0,
            white_noise_sigma: 0.0,
            drift_slope: 0.0,
            spontaneous_amp: 0.0,
            dark_noise_sigma: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub baseline_s: f64,
    pub session_s: f64,
    pub deadband_s: f64,
    pub repeats: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            baseline_s: 120.0,
            session_s: 240.0,
            deadband_s: 60.0,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_long: usize,
    pub n_reference: usize,
    pub sampling_rate_hz: f64,
    /// Mean dark-corrected intensity with no absorption change.
    pub base_intensity: f64,
    pub class_signatures: Vec<ClassSignature>,
    pub noise: NoiseConfig,
    /// Stationary std of the scalp component shared by long and reference.
    pub superficial_amp: f64,
    pub superficial_tau_s: f64,
    pub dark_bias: f64,
    /// Multiplicative per-subject jitter on every signature amplitude.
    pub inter_subject_sigma: f64,
    pub protocol: ProtocolConfig,
    pub seed: u64,
}

impl SynthConfig {
    pub fn n_classes(&self) -> usize {
        self.class_signatures.len()
    }

    pub fn layout(&self) -> Result<ChannelLayout, SynthError> {
        ChannelLayout::nearest(self.n_long, self.n_reference).map_err(|e| invalid(e.to_string()))
    }

    pub fn duration_s(&self) -> f64 {
        let p = &self.protocol;
        p.baseline_s + (self.n_classes() * p.repeats) as f64 * (p.session_s + p.deadband_s)
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s() * self.sampling_rate_hz).round() as usize
    }

    /// Sessions in presentation order: every class once per repeat.
    pub fn sessions(&self) -> Vec<LabelInterval> {
        let p = &self.protocol;
        let mut t = p.baseline_s;
        let mut out = Vec::new();
        for _ in 0..p.repeats {
            for class in 0..self.n_classes() {
                out.push(LabelInterval::new(t, t + p.session_s, class));
                t += p.session_s + p.deadband_s;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let nyquist = self.sampling_rate_hz / 2.0;
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(invalid("sampling rate must be positive"));
        }
        self.layout()?;
        if self.class_signatures.is_empty() {
            return Err(invalid("need at least one class"));
        }
        for (c, sig) in self.class_signatures.iter().enumerate() {
            if sig.hbo.len() != self.n_long || sig.hbr.len() != self.n_long {
                return Err(invalid(format!("signature {c} does not cover {} channels", self.n_long)));
            }
            if !sig.hbo.iter().chain(&sig.hbr).all(|v| v.is_finite()) {
                return Err(invalid(format!("signature {c} has non-finite amplitudes")));
            }
            if !(sig.rise_time_s > 0.0) {
                return Err(invalid(format!("signature {c} needs a positive rise time")));
            }
        }
        let n = &self.noise;
        let amps = [
            ("heartbeat_amp", n.heartbeat_amp),
            ("respiration_amp", n.respiration_amp),
            ("mayer_amp", n.mayer_amp),
            ("white_noise_sigma", n.white_noise_sigma),
            ("spontaneous_amp", n.spontaneous_amp),
            ("dark_noise_sigma", n.dark_noise_sigma),
            ("superficial_amp", self.superficial_amp),
            ("dark_bias", self.dark_bias),
            ("inter_subject_sigma", self.inter_subject_sigma),
        ];
        for (name, v) in amps {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be a finite non-negative value")));
            }
        }
        for (name, f) in [
            ("heartbeat_hz", n.heartbeat_hz),
            ("respiration_hz", n.respiration_hz),
            ("mayer_hz", n.mayer_hz),
        ] {
            if !(f >= 0.0 && f < nyquist) {
                return Err(invalid(format!("{name} must lie in [0, {nyquist}) Hz")));
            }
        }
        if !(n.spontaneous_tau_s > 0.0 && self.superficial_tau_s > 0.0) {
            return Err(invalid("time constants must be positive"));
        }
        if !n.drift_slope.is_finite() {
            return Err(invalid("drift_slope must be finite"));
        }
        if !(self.base_intensity > 0.0) {
            return Err(invalid("base_intensity must be positive"));
        }
        let p = &self.protocol;
        if !(p.baseline_s >= 0.0 && p.session_s > 0.0 && p.deadband_s >= 0.0 && p.repeats >= 1) {
            return Err(invalid("protocol durations must be non-negative, sessions positive"));
        }
        if self.n_subjects == 0 {
            return Err(invalid("need at least one subject"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ThreeState,
    BinaryMotor,
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "three_state" => Ok(Scenario::ThreeState),
            "binary_motor" => Ok(Scenario::BinaryMotor),
            other => Err(format!("unknown preset `{other}`")),
        }
    }
}

/// Random pattern with entries of magnitude in `[0.5, 1] * scale` and
/// random sign.
fn pattern(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(0.5..=1.0) * scale;
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

const PRESET_PATTERN_SEED: u64 = 0x5EED_F1A5;
const N_LONG: usize = 16;
const RISE_TIME_S: f64 = 10.0;

pub fn scenario_preset(name: Scenario) -> SynthConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(PRESET_PATTERN_SEED);
    let base = SynthConfig {
        n_subjects: 9,
        n_long: N_LONG,
        n_reference: 2,
        sampling_rate_hz: 4.0,
        base_intensity: 1000.0,
        class_signatures: Vec::new(),
        noise: NoiseConfig::default(),
        superficial_amp: 0.03,
        superficial_tau_s: 8.0,
        dark_bias: 50.0,
        inter_subject_sigma: 0.2,
        protocol: ProtocolConfig::default(),
        seed: 0,
    };
    match name {
        Scenario::ThreeState => {
            let class_signatures = (0..3)
                .map(|_| ClassSignature {
                    hbo: pattern(&mut rng, N_LONG, 0.1),
                    hbr: pattern(&mut rng, N_LONG, 0.05),
                    rise_time_s: RISE_TIME_S,
                })
                .collect();
            SynthConfig {
                class_signatures,
                ..base
            }
        }
        Scenario::BinaryMotor => {
            let motor_hbo = pattern(&mut rng, N_LONG, 0.1);
            let motor_hbr = pattern(&mut rng, N_LONG, 0.05);
            let cog_hbo = pattern(&mut rng, N_LONG, 0.06);
            let cog_hbr = pattern(&mut rng, N_LONG, 0.03);
            let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
            // class 0: arithmetic while writing, class 1: writing only
            let class_signatures = vec![
                ClassSignature {
                    hbo: add(&motor_hbo, &cog_hbo),
                    hbr: add(&motor_hbr, &cog_hbr),
                    rise_time_s: RISE_TIME_S,
                },
                ClassSignature {
                    hbo: motor_hbo,
                    hbr: motor_hbr,
                    rise_time_s: RISE_TIME_S,
                },
            ];
            SynthConfig {
                n_subjects: 4,
                class_signatures,
                protocol: ProtocolConfig {
                    session_s: 180.0,
                    ..ProtocolConfig::default()
                },
                ..base
            }
        }
    }
}

/// Noise-free chromophore traces, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub times: Vec<f64>,
    pub hbo: Vec<Vec<f64>>,
    pub hbr: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// `t_s,ch,hbo_true,hbr_true`, one row per (sample, channel).
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "t_s,ch,hbo_true,hbr_true")?;
        for (k, t) in self.times.iter().enumerate() {
            for c in 0..self.hbo.len() {
                writeln!(w, "{t},{c},{},{}", self.hbo[c][k], self.hbr[c][k])?;
            }
        }
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub recording: RawRecording,
    pub labels: LabelTrack,
    pub truth: GroundTruth,
    /// Signatures after this subject's jitter.
    pub signatures: Vec<ClassSignature>,
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Subject `index`'s signatures: `sig * (1 + sigma * z)` entry by entry.
pub fn subject_signatures(cfg: &SynthConfig, index: usize) -> Vec<ClassSignature> {
    let mut rng = stream_rng(cfg.seed, 2 * index as u64 + 1);
    cfg.class_signatures
        .iter()
        .map(|sig| {
            let mut jitter = |v: &f64| v * (1.0 + cfg.inter_subject_sigma * normal(&mut rng));
            ClassSignature {
                hbo: sig.hbo.iter().map(&mut jitter).collect(),
                hbr: sig.hbr.iter().map(&mut jitter).collect(),
                rise_time_s: sig.rise_time_s,
            }
        })
        .collect()
}

/// Stationary Ornstein-Uhlenbeck samples with std `amp`.
fn ou_process(rng: &mut ChaCha8Rng, n: usize, amp: f64, tau_s: f64, dt: f64) -> Vec<f64> {
    let rho = (-dt / tau_s).exp();
    let innov = amp * (1.0 - rho * rho).sqrt();
    let mut x = amp * normal(rng);
    (0..n)
        .map(|_| {
            let v = x;
            x = rho * x + innov * normal(rng);
            v
        })
        .collect()
}

pub fn gen_subject(cfg: &SynthConfig, index: usize) -> Result<SubjectData, SynthError> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let fs = cfg.sampling_rate_hz;
    let dt = 1.0 / fs;
    let n = cfg.n_frames();
    let times: Vec<f64> = (0..n).map(|k| k as f64 / fs).collect();
    let sessions = cfg.sessions();
    let labels = LabelTrack::new(sessions.clone(), cfg.n_classes()).map_err(|e| invalid(e.to_string()))?;
    let signatures = subject_signatures(cfg, index);

    // first-order activation per class, driven by its sessions
    let activation: Vec<Vec<f64>> = signatures
        .iter()
        .enumerate()
        .map(|(class, sig)| {
            let gain = 1.0 - (-dt / sig.rise_time_s).exp();
            let mut a = 0.0;
            times
                .iter()
                .map(|&t| {
                    let on = sessions.iter().any(|s| s.label == class && s.contains(t));
                    let target = if on { 1.0 } else { 0.0 };
                    a += (target - a) * gain;
                    a
                })
                .collect()
        })
        .collect();
    let chromophore = |amp: &dyn Fn(&ClassSignature) -> &Vec<f64>, c: usize| -> Vec<f64> {
        (0..n)
            .map(|k| {
                signatures
                    .iter()
                    .zip(&activation)
                    .map(|(sig, a)| amp(sig)[c] * a[k])
                    .sum()
            })
            .collect()
    };
    let hbo_true: Vec<Vec<f64>> = (0..cfg.n_long).map(|c| chromophore(&|s| &s.hbo, c)).collect();
    let hbr_true: Vec<Vec<f64>> = (0..cfg.n_long).map(|c| chromophore(&|s| &s.hbr, c)).collect();

    let mut rng = stream_rng(cfg.seed, 2 * index as u64 + 2);
    let nz = &cfg.noise;
    let phases: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let systemic: Vec<f64> = times
        .iter()
        .map(|&t| {
            nz.heartbeat_amp * (2.0 * PI * nz.heartbeat_hz * t + phases[0]).sin()
                + nz.respiration_amp * (2.0 * PI * nz.respiration_hz * t + phases[1]).sin()
                + nz.mayer_amp * (2.0 * PI * nz.mayer_hz * t + phases[2]).sin()
                + nz.drift_slope * t
        })
        .collect();
    // [reference][wavelength]
    let superficial: Vec<[Vec<f64>; 2]> = (0..cfg.n_reference)
        .map(|_| {
            std::array::from_fn(|_| ou_process(&mut rng, n, cfg.superficial_amp, cfg.superficial_tau_s, dt))
        })
        .collect();
    let spontaneous: Vec<[Vec<f64>; 2]> = (0..cfg.n_long)
        .map(|_| std::array::from_fn(|_| ou_process(&mut rng, n, nz.spontaneous_amp, nz.spontaneous_tau_s, dt)))
        .collect();
    let base_long: Vec<[f64; 2]> = (0..cfg.n_long)
        .map(|_| std::array::from_fn(|_| cfg.base_intensity * rng.random_range(0.8..1.2)))
        .collect();
    let base_ref: Vec<[f64; 2]> = (0..cfg.n_reference)
        .map(|_| std::array::from_fn(|_| cfg.base_intensity * rng.random_range(0.8..1.2)))
        .collect();

    let mut frames = Vec::with_capacity(n);
    for (k, &t) in times.iter().enumerate() {
        let reading = |i0: f64, od: f64, dark: f64| i0 * 10f64.powf(-od) + dark;
        let dark_sample = |rng: &mut ChaCha8Rng| (cfg.dark_bias + nz.dark_noise_sigma * normal(rng)).max(0.0);
        let white = |rng: &mut ChaCha8Rng| nz.white_noise_sigma * normal(rng);
        let long = (0..cfg.n_long)
            .map(|c| {
                let r = layout.reference_of(c);
                let dark = dark_sample(&mut rng);
                let shared = |w: usize| systemic[k] + superficial[r][w][k] + spontaneous[c][w][k];
                let od730 = hbr_true[c][k] + shared(0) + white(&mut rng);
                let od850 = hbo_true[c][k] + shared(1) + white(&mut rng);
                Triplet::new(
                    reading(base_long[c][0], od730, dark),
                    reading(base_long[c][1], od850, dark),
                    dark,
                )
            })
            .collect();
        let reference = (0..cfg.n_reference)
            .map(|r| {
                let dark = dark_sample(&mut rng);
                let od730 = systemic[k] + superficial[r][0][k] + white(&mut rng);
                let od850 = systemic[k] + superficial[r][1][k] + white(&mut rng);
                Triplet::new(
                    reading(base_ref[r][0], od730, dark),
                    reading(base_ref[r][1], od850, dark),
                    dark,
                )
            })
            .collect();
        frames.push(RawFrame { t, long, reference });
    }
    let recording =
        RawRecording::new(subject_id(index), fs, layout, frames).map_err(|e| invalid(e.to_string()))?;
    Ok(SubjectData {
        recording,
        labels,
        truth: GroundTruth {
            times,
            hbo: hbo_true,
            hbr: hbr_true,
        },
        signatures,
    })
}

pub fn gen_group(cfg: &SynthConfig, n_subjects: usize) -> Result<Vec<SubjectData>, SynthError> {
    if n_subjects == 0 {
        return Err(invalid("need at least one subject"));
    }
    (0..n_subjects).map(|k| gen_subject(cfg, k)).collect()
}

/// Time-ordered dataset of i.i.d. Gaussian features around per-class means
/// `separation * e_c`; classes occupy consecutive blocks. Used as a control
/// with no temporal autocorrelation.
pub fn iid_feature_dataset(
    n_per_class: usize,
    n_classes: usize,
    n_features: usize,
    separation: f64,
    seed: u64,
) -> LabeledDataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per_class * n_classes;
    let mut x = Vec::with_capacity(n * n_features);
    let mut y = Vec::with_capacity(n);
    for class in 0..n_classes {
        for _ in 0..n_per_class {
            for f in 0..n_features {
                let mu = if f % n_classes == class { separation } else { 0.0 };
                x.push(mu + normal(&mut rng));
            }
            y.push(class);
        }
    }
    LabeledDataset::new(
        x,
        n_features,
        y,
        n_classes,
        vec!["iid".into()],
        vec![0; n],
        (0..n).map(|k| k as f64 * 0.25).collect(),
    )
    .expect("consistent by construction")
}
