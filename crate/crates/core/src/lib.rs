//! fNIRS affective-state classification pipeline.
//!
//! Raw optical intensities go through [`preprocess`] and [`features`] (glued
//! together by [`pipeline`]), become labeled samples in [`dataset`], and are
//! classified by the from-scratch network in [`mlp`]. [`eval`] runs the
//! repeated evaluation protocols and [`synth`] generates recordings with
//! known ground truth.

pub mod dataset;
pub mod eval;
pub mod exec;
pub mod features;
pub mod ingest;
pub mod mlp;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod synth;

pub use scalar::Scalar;

pub type Dataset = dataset::LabeledDataset<f64>;
pub type Dataset32 = dataset::LabeledDataset<f32>;
pub type Model = mlp::MlpModel<f64>;
pub type Model32 = mlp::MlpModel<f32>;
pub type Hemo = features::HemoSeries<f64>;
