//! Optical density, hemoglobin conversion and the 64-value feature layout.
//!
//! Feature vectors are ordered `[hbo ch0..N, hbr ch0..N, hbt ch0..N, oxy ch0..N]`
//! with `hbt = hbo + hbr` and `oxy = hbo - hbr`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("reference intensity must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("extinction matrix is singular (det {det})")]
    SingularExtinctionMatrix { det: f64 },
    #[error("pathlength products must be positive and finite")]
    InvalidPathlength,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("hemoglobin frame violates hbt/oxy identities at channel {0}")]
    InconsistentFrame(usize),
}

/// `-log10(i / i0)` sample by sample.
pub fn optical_density<T: Scalar>(i: &[T], i0: T) -> Result<Vec<T>, FeatureError> {
    if !(i0 > T::zero()) || !i0.is_finite() {
        return Err(FeatureError::NonPositiveReference(i0.to_f64_lossy()));
    }
    Ok(i.iter().map(|&v| -(v / i0).log10()).collect())
}

/// How wavelength ODs become chromophore concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConversionSpec {
    /// HbO is read off the 850 nm trace and HbR off the 730 nm trace.
    PaperSimple,
    /// Modified Beer-Lambert: rows of `extinction` are wavelengths
    /// (730, 850), columns are chromophores (HbO, HbR).
    Mbll {
        extinction: [[f64; 2]; 2],
        d730: f64,
        d850: f64,
    },
}

impl Default for ConversionSpec {
    fn default() -> Self {
        ConversionSpec::PaperSimple
    }
}

impl ConversionSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        match *self {
            ConversionSpec::PaperSimple => Ok(()),
            ConversionSpec::Mbll {
                extinction: e,
                d730,
                d850,
            } => {
                if !(d730 > 0.0 && d850 > 0.0 && d730.is_finite() && d850.is_finite()) {
                    return Err(FeatureError::InvalidPathlength);
                }
                let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
                let norm_sq: f64 = e.iter().flatten().map(|v| v * v).sum();
                if !det.is_finite() || det.abs() <= 1e-12 * norm_sq {
                    return Err(FeatureError::SingularExtinctionMatrix { det });
                }
                Ok(())
            }
        }
    }
}

/// Returns `(hbo, hbr)`.
pub fn to_hemoglobin<T: Scalar>(
    od730: &[T],
    od850: &[T],
    spec: &ConversionSpec,
) -> Result<(Vec<T>, Vec<T>), FeatureError> {
    if od730.len() != od850.len() {
        return Err(FeatureError::LengthMismatch(od730.len(), od850.len()));
    }
    spec.validate()?;
    match *spec {
        ConversionSpec::PaperSimple => Ok((od850.to_vec(), od730.to_vec())),
        ConversionSpec::Mbll {
            extinction: e,
            d730,
            d850,
        } => {
            // Cramer's rule on the 2x2 system.
            let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
            let inv = [
                [T::lit(e[1][1] / det), T::lit(-e[0][1] / det)],
                [T::lit(-e[1][0] / det), T::lit(e[0][0] / det)],
            ];
            let (s730, s850) = (T::lit(d730), T::lit(d850));
            let mut hbo = Vec::with_capacity(od730.len());
            let mut hbr = Vec::with_capacity(od730.len());
            for (&a, &b) in od730.iter().zip(od850) {
                let (y0, y1) = (a / s730, b / s850);
                hbo.push(inv[0][0] * y0 + inv[0][1] * y1);
                hbr.push(inv[1][0] * y0 + inv[1][1] * y1);
            }
            Ok((hbo, hbr))
        }
    }
}

/// Per-channel chromophore values at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemoFrame<T> {
    pub hbo: Vec<T>,
    pub hbr: Vec<T>,
    pub hbt: Vec<T>,
    pub oxy: Vec<T>,
}

impl<T: Scalar> HemoFrame<T> {
    pub fn from_pairs(hbo: Vec<T>, hbr: Vec<T>) -> Result<Self, FeatureError> {
        if hbo.len() != hbr.len() {
            return Err(FeatureError::LengthMismatch(hbo.len(), hbr.len()));
        }
        let hbt = hbo.iter().zip(&hbr).map(|(&o, &r)| o + r).collect();
        let oxy = hbo.iter().zip(&hbr).map(|(&o, &r)| o - r).collect();
        Ok(Self { hbo, hbr, hbt, oxy })
    }

    pub fn n_channels(&self) -> usize {
        self.hbo.len()
    }

    pub fn check(&self) -> Result<(), FeatureError> {
        for c in 0..self.hbo.len() {
            if self.hbt[c] != self.hbo[c] + self.hbr[c] || self.oxy[c] != self.hbo[c] - self.hbr[c] {
                return Err(FeatureError::InconsistentFrame(c));
            }
        }
        Ok(())
    }
}

/// Flat feature vector in the fixed `[hbo, hbr, hbt, oxy]` block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T>(pub Vec<T>);

impl<T> FeatureVector<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

pub fn flatten<T: Scalar>(frame: &HemoFrame<T>) -> FeatureVector<T> {
    let mut v = Vec::with_capacity(4 * frame.n_channels());
    v.extend_from_slice(&frame.hbo);
    v.extend_from_slice(&frame.hbr);
    v.extend_from_slice(&frame.hbt);
    v.extend_from_slice(&frame.oxy);
    FeatureVector(v)
}

/// Channel-major hemoglobin traces on a shared clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemoSeries<T> {
    pub times: Vec<f64>,
    pub hbo: Vec<Vec<T>>,
    pub hbr: Vec<Vec<T>>,
    pub hbt: Vec<Vec<T>>,
    pub oxy: Vec<Vec<T>>,
}

impl<T: Scalar> HemoSeries<T> {
    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn n_channels(&self) -> usize {
        self.hbo.len()
    }

    pub fn n_features(&self) -> usize {
        4 * self.n_channels()
    }

    pub fn frame(&self, k: usize) -> HemoFrame<T> {
        let col = |m: &Vec<Vec<T>>| m.iter().map(|ch| ch[k]).collect::<Vec<T>>();
        HemoFrame {
            hbo: col(&self.hbo),
            hbr: col(&self.hbr),
            hbt: col(&self.hbt),
            oxy: col(&self.oxy),
        }
    }

    /// Appends the flattened features of sample `k` to `out`.
    pub fn extend_feature_row(&self, k: usize, out: &mut Vec<T>) {
        for block in [&self.hbo, &self.hbr, &self.hbt, &self.oxy] {
            out.extend(block.iter().map(|ch| ch[k]));
        }
    }
}

/// Derives HbT and Oxy for every channel and sample.
pub fn compose_features<T: Scalar>(
    times: Vec<f64>,
    hbo: Vec<Vec<T>>,
    hbr: Vec<Vec<T>>,
) -> Result<HemoSeries<T>, FeatureError> {
    if hbo.len() != hbr.len() {
        return Err(FeatureError::LengthMismatch(hbo.len(), hbr.len()));
    }
    for (o, r) in hbo.iter().zip(&hbr) {
        if o.len() != times.len() {
            return Err(FeatureError::LengthMismatch(o.len(), times.len()));
        }
        if r.len() != times.len() {
            return Err(FeatureError::LengthMismatch(r.len(), times.len()));
        }
    }
    let combine = |f: fn(T, T) -> T| {
        hbo.iter()
            .zip(&hbr)
            .map(|(o, r)| o.iter().zip(r).map(|(&a, &b)| f(a, b)).collect())
            .collect::<Vec<Vec<T>>>()
    };
    let hbt = combine(|a, b| a + b);
    let oxy = combine(|a, b| a - b);
    Ok(HemoSeries {
        times,
        hbo,
        hbr,
        hbt,
        oxy,
    })
}
