//! End-to-end conversion of a raw recording into hemoglobin traces.
//!
//! Order: dark subtraction, optical density against the baseline mean,
//! low-pass, short-channel subtraction, baseline removal, chromophore
//! conversion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{label_samples, DatasetError, LabeledDataset};
use crate::features::{compose_features, optical_density, to_hemoglobin, ConversionSpec, FeatureError, HemoSeries};
use crate::ingest::{LabelTrack, RawRecording};
use crate::preprocess::{
    baseline_correct, baseline_mean, design_lowpass, lowpass_filter, short_channel_correct, subtract_dark,
    warmup_flags, BaselineWindow, ChannelSeries, FilterSpec, IntensitySeries, PreprocessError,
};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("recording has no frames")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub filter: FilterSpec,
    pub sc_coeff: f64,
    pub conversion: ConversionSpec,
    pub baseline: BaselineWindow,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            filter: FilterSpec::default(),
            sc_coeff: 1.0,
            conversion: ConversionSpec::PaperSimple,
            baseline: BaselineWindow::default(),
        }
    }
}

/// Every intermediate of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineStages<T> {
    pub intensity: IntensitySeries<T>,
    pub od_long: Vec<ChannelSeries<T>>,
    pub od_reference: Vec<ChannelSeries<T>>,
    pub filtered_long: Vec<ChannelSeries<T>>,
    pub filtered_reference: Vec<ChannelSeries<T>>,
    pub corrected: Vec<ChannelSeries<T>>,
    pub baselined: Vec<ChannelSeries<T>>,
    pub hemo: HemoSeries<T>,
    pub warmup: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub hemo: HemoSeries<T>,
    /// Samples within a filter half-length of either end.
    pub warmup: Vec<bool>,
    /// Dark-corrected samples raised to the intensity floor.
    pub clamped: usize,
}

pub fn run_pipeline<T: Scalar>(rec: &RawRecording, cfg: &PipelineConfig) -> Result<PipelineOutput<T>, PipelineError> {
    let stages = run_stages::<T>(rec, cfg)?;
    Ok(PipelineOutput {
        clamped: stages.intensity.clamped,
        hemo: stages.hemo,
        warmup: stages.warmup,
    })
}

/// Pipeline output reduced to labeled samples: session samples only, away
/// from the baseline window and filter warm-up.
pub fn labeled_features<T: Scalar>(
    rec: &RawRecording,
    track: &LabelTrack,
    cfg: &PipelineConfig,
) -> Result<LabeledDataset<T>, PipelineError> {
    let out = run_pipeline::<T>(rec, cfg)?;
    Ok(label_samples(&out.hemo, track, &out.warmup, Some(cfg.baseline), &rec.subject_id)?)
}

pub fn run_stages<T: Scalar>(rec: &RawRecording, cfg: &PipelineConfig) -> Result<PipelineStages<T>, PipelineError> {
    if rec.frames.is_empty() {
        return Err(PipelineError::Empty);
    }
    cfg.conversion.validate()?;
    let fs = rec.sampling_rate_hz;
    let t0 = rec.frames[0].t;
    let taps: Vec<T> = design_lowpass(&cfg.filter, fs)?;
    let intensity = subtract_dark::<T>(rec);

    let to_od = |chans: &[ChannelSeries<T>]| -> Result<Vec<ChannelSeries<T>>, PipelineError> {
        chans
            .iter()
            .map(|ch| {
                ch.try_map(|x| {
                    let i0 = baseline_mean(x, cfg.baseline, fs, t0)?;
                    Ok::<_, PipelineError>(optical_density(x, i0)?)
                })
            })
            .collect()
    };
    let od_long = to_od(&intensity.long)?;
    let od_reference = to_od(&intensity.reference)?;

    let filter_all = |chans: &[ChannelSeries<T>]| -> Vec<ChannelSeries<T>> {
        chans.iter().map(|ch| ch.map(|x| lowpass_filter(x, &taps))).collect()
    };
    let filtered_long = filter_all(&od_long);
    let filtered_reference = filter_all(&od_reference);

    let corrected = short_channel_correct(&filtered_long, &filtered_reference, &rec.layout, T::lit(cfg.sc_coeff))?;
    let baselined = corrected
        .iter()
        .map(|ch| ch.try_map(|x| baseline_correct(x, cfg.baseline, fs, t0)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut hbo = Vec::with_capacity(baselined.len());
    let mut hbr = Vec::with_capacity(baselined.len());
    for ch in &baselined {
        let (o, r) = to_hemoglobin(&ch.w730, &ch.w850, &cfg.conversion)?;
        hbo.push(o);
        hbr.push(r);
    }
    let hemo = compose_features(rec.times(), hbo, hbr)?;
    let warmup = warmup_flags(rec.frames.len(), cfg.filter.n_taps);

    Ok(PipelineStages {
        intensity,
        od_long,
        od_reference,
        filtered_long,
        filtered_reference,
        corrected,
        baselined,
        hemo,
        warmup,
    })
}
