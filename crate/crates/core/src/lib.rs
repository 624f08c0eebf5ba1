//! Device-free passive localization from received signal strength.
//!
//! A person standing somewhere in a monitored area perturbs the RSS of every
//! (access point, monitoring point) stream. The offline phase records a
//! histogram per stream at each calibration location ([`radiomap`]); the
//! online phase picks the location whose histograms best explain a window
//! of fresh samples ([`estimators`]), then refines it in continuous space
//! ([`postprocess`]).

pub mod commands;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod format;
pub mod postprocess;
pub mod radiomap;
pub mod simulator;
pub mod types;

pub use error::{Error, Result};
pub use estimators::{
    deterministic_estimate, discrete_estimate, log_likelihood, random_estimate, EstimatorConfig,
    PosteriorVector, Prior, TieBreak,
};
pub use eval::{
    evaluate, percentile, ErrorSummary, EstimatorKind, EvalConfig, SweepResult, TestTrace,
    WindowMode,
};
pub use postprocess::{
    continuous_estimate, spatial_average, time_average, ContinuousConfig, EstimatePoint,
};
pub use radiomap::{
    build_radio_map, histogram_probability, SmoothingConfig, SmoothingMode, TrainingTrace,
};
pub use types::{
    euclidean_distance, Location, PassiveRadioMap, RssiHistogram, RssiRange, RssiSample,
    SignalWindow, StreamId,
};
