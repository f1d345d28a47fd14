//! Hybrid frequency-response / LSTM system identification.
//!
//! The crate covers the full parameterize-predict-evaluate loop for
//! non-linear MIMO plants:
//!
//! * [`signal`] multichannel time series, standardization, FFT low-pass and
//!   subsequence extraction;
//! * [`spectral`] Welch PSD/CPSD estimation and the FRF matrix model;
//! * [`lstm`] a from-scratch LSTM with BPTT and RMSProp;
//! * [`pipeline`] windowed subsequence prediction and the `pure`, `hybrid1`
//!   and `hybrid2` predictor compositions;
//! * [`fatigue`] and [`metrics`] rainflow damage, Multi-Rain and the error
//!   metrics used to compare predictors;
//! * [`synth`] synthetic excitations and plants, [`store`] on-disk formats,
//!   and [`study`] the dataset-size experiment.

// NaN must fail validation, hence `!(x > 0.0)` style checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fatigue;
pub mod lstm;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod signal;
pub mod spectral;
pub mod store;
pub mod study;
pub mod synth;

pub use error::{Error, Result};
pub use fatigue::{CycleSet, DirectionSet, WoehlerParams};
pub use lstm::{LstmNetwork, TrainConfig};
pub use metrics::EvaluationReport;
pub use pipeline::{HybridPredictor, Scheme, WindowingConfig};
pub use signal::{MultiChannelSignal, StandardizationStats};
pub use spectral::{FrfModel, SpectralDensity};
