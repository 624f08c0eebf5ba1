//! Offline phase: turn per-location training traces into a passive radio map.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{
    check_unique_streams, Location, PassiveRadioMap, RssiHistogram, RssiRange, RssiSample, StreamId,
};

/// Samples recorded while a person stands at one calibration location.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub location: Location,
    pub samples: Vec<RssiSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingMode {
    /// Raise every bin to at least `floor`, then renormalize.
    FloorAndRenormalize,
    /// Add `floor` to every empirical frequency, then renormalize.
    Additive,
}

impl SmoothingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SmoothingMode::FloorAndRenormalize => "floor-and-renormalize",
            SmoothingMode::Additive => "additive",
        }
    }
}

impl std::str::FromStr for SmoothingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(SmoothingMode::Additive),
            "floor-and-renormalize" => Ok(SmoothingMode::FloorAndRenormalize),
            other => Err(Error::InvalidParams(format!(
                "unknown smoothing mode `{other}`"
            ))),
        }
    }
}

/// Keeps every histogram bin strictly positive so a single unseen value
/// cannot zero a likelihood product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    pub floor: f64,
    pub mode: SmoothingMode,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            floor: 1e-3,
            mode: SmoothingMode::Additive,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self, range: RssiRange) -> Result<()> {
        let width = range.width();
        if !(self.floor > 0.0 && self.floor < 1.0 / width as f64) {
            return Err(Error::InvalidSmoothing {
                floor: self.floor,
                width,
            });
        }
        Ok(())
    }

    /// Smoothed distribution from raw bin counts. `counts` must not be all zero.
    pub fn smooth(&self, counts: &[usize]) -> Vec<f64> {
        let n: usize = counts.iter().sum();
        debug_assert!(n > 0);
        let n = n as f64;
        let bins = counts.len() as f64;
        match self.mode {
            SmoothingMode::Additive => {
                // (c + floor * n) / (n + bins * floor * n), written over
                // frequencies so equal frequencies give identical bits
                let total = 1.0 + bins * self.floor;
                counts
                    .iter()
                    .map(|&c| (c as f64 / n + self.floor) / total)
                    .collect()
            }
            SmoothingMode::FloorAndRenormalize => {
                let raised: Vec<f64> = counts
                    .iter()
                    .map(|&c| (c as f64 / n).max(self.floor))
                    .collect();
                let total: f64 = raised.iter().sum();
                raised.into_iter().map(|p| p / total).collect()
            }
        }
    }
}

/// Build one smoothed histogram from raw dBm values.
pub fn build_histogram(
    values: &[i32],
    range: RssiRange,
    smoothing: SmoothingConfig,
) -> Result<RssiHistogram> {
    let mut counts = vec![0usize; range.width()];
    let mut sum = 0i64;
    for &v in values {
        let i = range.index(v).ok_or(Error::OutOfRangeValue {
            value: v,
            min: range.min,
            max: range.max,
        })?;
        counts[i] += 1;
        sum += i64::from(v);
    }
    if values.is_empty() {
        return Err(Error::InvalidParams(
            "histogram needs at least one sample".into(),
        ));
    }
    let mean = sum as f64 / values.len() as f64;
    RssiHistogram::from_parts(range, smoothing.smooth(&counts), values.len(), mean)
}

/// Build a passive radio map: one smoothed histogram per (location, stream).
///
/// Samples lost in collection are not interpolated; each histogram uses
/// whatever samples arrived.
pub fn build_radio_map(
    traces: &[TrainingTrace],
    streams: &[StreamId],
    rssi_range: RssiRange,
    smoothing: SmoothingConfig,
) -> Result<PassiveRadioMap> {
    if traces.is_empty() {
        return Err(Error::EmptyTraces);
    }
    if streams.is_empty() {
        return Err(Error::NoStreams);
    }
    check_unique_streams(streams)?;
    smoothing.validate(rssi_range)?;
    let mut ids = HashSet::new();
    for t in traces {
        if !ids.insert(t.location.id.as_str()) {
            return Err(Error::DuplicateLocation(t.location.id.clone()));
        }
    }

    let rows = traces
        .par_iter()
        .map(|trace| location_histograms(trace, streams, rssi_range, smoothing))
        .collect::<Result<Vec<_>>>()?;

    PassiveRadioMap::new(
        traces.iter().map(|t| t.location.clone()).collect(),
        streams.to_vec(),
        rows,
        rssi_range,
        smoothing,
    )
}

fn location_histograms(
    trace: &TrainingTrace,
    streams: &[StreamId],
    range: RssiRange,
    smoothing: SmoothingConfig,
) -> Result<Vec<RssiHistogram>> {
    let mut per_stream: Vec<Vec<i32>> = vec![Vec::new(); streams.len()];
    for sample in &trace.samples {
        let s = streams
            .iter()
            .position(|id| *id == sample.stream)
            .ok_or_else(|| Error::UnknownStream(sample.stream.clone()))?;
        if !range.contains(sample.value) {
            return Err(Error::OutOfRangeSample {
                stream: sample.stream.clone(),
                value: sample.value,
                min: range.min,
                max: range.max,
            });
        }
        per_stream[s].push(sample.value);
    }
    streams
        .iter()
        .zip(&per_stream)
        .map(|(stream, values)| {
            if values.is_empty() {
                return Err(Error::MissingStream {
                    location: trace.location.id.clone(),
                    stream: stream.clone(),
                });
            }
            build_histogram(values, range, smoothing)
        })
        .collect()
}

/// Smoothed probability of `value`; always strictly positive.
pub fn histogram_probability(h: &RssiHistogram, value: i32) -> Result<f64> {
    let range = h.range();
    h.probability(value).ok_or(Error::OutOfRangeValue {
        value,
        min: range.min,
        max: range.max,
    })
}
