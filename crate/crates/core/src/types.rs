//! Shared domain vocabulary: locations, streams, samples, histograms and the
//! passive radio map.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::radiomap::SmoothingConfig;

/// Tolerance on histogram normalization.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A point in the planar coordinate frame, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self {
            id: id.into(),
            x,
            y,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Euclidean distance between two locations, in meters.
pub fn euclidean_distance(a: &Location, b: &Location) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// One raw data stream: the signal of access point `ap` as heard at
/// monitoring point `mp`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    pub ap: String,
    pub mp: String,
}

impl StreamId {
    pub fn new(ap: impl Into<String>, mp: impl Into<String>) -> Self {
        Self {
            ap: ap.into(),
            mp: mp.into(),
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ap, self.mp)
    }
}

impl std::str::FromStr for StreamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((ap, mp)) if !ap.is_empty() && !mp.is_empty() && !mp.contains(':') => {
                Ok(StreamId::new(ap, mp))
            }
            _ => Err(Error::InvalidParams(format!(
                "stream `{s}` is not of the form AP:MP"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RssiSample {
    pub stream: StreamId,
    pub value: i32,
    pub timestamp: f64,
}

/// Inclusive integer dBm range covered by every histogram; bin width is 1 dBm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RssiRange {
    pub min: i32,
    pub max: i32,
}

impl Default for RssiRange {
    fn default() -> Self {
        Self { min: -100, max: 0 }
    }
}

impl RssiRange {
    pub fn new(min: i32, max: i32) -> Result<Self> {
        if min > max {
            return Err(Error::InvalidRange { min, max });
        }
        Ok(Self { min, max })
    }

    /// Number of 1 dBm bins.
    pub fn width(&self) -> usize {
        (self.max - self.min) as usize + 1
    }

    pub fn contains(&self, value: i32) -> bool {
        (self.min..=self.max).contains(&value)
    }

    pub fn clamp(&self, value: i32) -> i32 {
        value.clamp(self.min, self.max)
    }

    pub(crate) fn index(&self, value: i32) -> Option<usize> {
        self.contains(value).then(|| (value - self.min) as usize)
    }

    pub fn values(&self) -> impl Iterator<Item = i32> {
        self.min..=self.max
    }
}

/// Smoothed RSS distribution of one stream at one location.
///
/// Bins are stored densely over the whole range, so the log table can be
/// indexed directly by `value - range.min`.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiHistogram {
    range: RssiRange,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    sample_count: usize,
    mean_rssi: f64,
}

impl RssiHistogram {
    /// Assemble a histogram from already-smoothed probabilities.
    ///
    /// Fails unless there is exactly one probability per bin, every
    /// probability lies in (0, 1] and the total is 1 within tolerance.
    pub fn from_parts(
        range: RssiRange,
        probs: Vec<f64>,
        sample_count: usize,
        mean_rssi: f64,
    ) -> Result<Self> {
        if probs.len() != range.width() {
            return Err(Error::InvalidParams(format!(
                "histogram has {} bins, range needs {}",
                probs.len(),
                range.width()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidParams(format!(
                "histogram probability {p} outside (0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidParams(format!(
                "histogram sums to {total}, not 1"
            )));
        }
        if !mean_rssi.is_finite() {
            return Err(Error::InvalidParams("histogram mean is not finite".into()));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            range,
            probs,
            log_probs,
            sample_count,
            mean_rssi,
        })
    }

    pub fn range(&self) -> RssiRange {
        self.range
    }

    /// Smoothed probability of each bin, from `range.min` upward.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Iterate `(dBm, probability)` pairs.
    pub fn bins(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.range.values().zip(self.probs.iter().copied())
    }

    pub fn probability(&self, value: i32) -> Option<f64> {
        self.range.index(value).map(|i| self.probs[i])
    }

    pub fn log_probability(&self, value: i32) -> Option<f64> {
        self.range.index(value).map(|i| self.log_probs[i])
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Empirical mean of the raw training samples, before smoothing.
    pub fn mean_rssi(&self) -> f64 {
        self.mean_rssi
    }

    /// Smallest bin probability; the value a never-observed dBm receives.
    pub fn floor_probability(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Calibrated locations with one histogram per (location, stream).
///
/// Locations are kept sorted by id, so index order is id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveRadioMap {
    locations: Vec<Location>,
    streams: Vec<StreamId>,
    histograms: Vec<RssiHistogram>,
    rssi_range: RssiRange,
    smoothing: SmoothingConfig,
}

impl PassiveRadioMap {
    /// `histograms` is indexed `[location][stream]` in the order given.
    pub fn new(
        locations: Vec<Location>,
        streams: Vec<StreamId>,
        histograms: Vec<Vec<RssiHistogram>>,
        rssi_range: RssiRange,
        smoothing: SmoothingConfig,
    ) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::EmptyRadioMap);
        }
        if streams.is_empty() {
            return Err(Error::NoStreams);
        }
        check_unique_streams(&streams)?;
        let mut seen = HashSet::new();
        for loc in &locations {
            if !loc.is_finite() {
                return Err(Error::NonFiniteCoordinate(loc.id.clone()));
            }
            if !seen.insert(loc.id.as_str()) {
                return Err(Error::DuplicateLocation(loc.id.clone()));
            }
        }
        if histograms.len() != locations.len() {
            return Err(Error::InvalidParams(format!(
                "{} histogram rows for {} locations",
                histograms.len(),
                locations.len()
            )));
        }
        for (loc, row) in locations.iter().zip(&histograms) {
            if row.len() != streams.len() {
                return Err(Error::InvalidParams(format!(
                    "location `{}` has {} histograms for {} streams",
                    loc.id,
                    row.len(),
                    streams.len()
                )));
            }
            if row.iter().any(|h| h.range() != rssi_range) {
                return Err(Error::InvalidParams(format!(
                    "location `{}` has a histogram over a different rssi range",
                    loc.id
                )));
            }
        }

        let mut rows: Vec<(Location, Vec<RssiHistogram>)> =
            locations.into_iter().zip(histograms).collect();
        rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        let (locations, histograms): (Vec<_>, Vec<_>) = rows.into_iter().unzip();

        Ok(Self {
            locations,
            streams,
            histograms: histograms.into_iter().flatten().collect(),
            rssi_range,
            smoothing,
        })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn streams(&self) -> &[StreamId] {
        &self.streams
    }

    pub fn rssi_range(&self) -> RssiRange {
        self.rssi_range
    }

    pub fn smoothing(&self) -> SmoothingConfig {
        self.smoothing
    }

    pub fn histogram_count(&self) -> usize {
        self.histograms.len()
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.locations
            .binary_search_by(|l| l.id.as_str().cmp(id))
            .ok()
    }

    pub fn stream_index(&self, stream: &StreamId) -> Option<usize> {
        self.streams.iter().position(|s| s == stream)
    }

    /// Histogram by dense indices.
    pub fn histogram_at(&self, location: usize, stream: usize) -> &RssiHistogram {
        &self.histograms[location * self.streams.len() + stream]
    }

    pub fn histogram(&self, location_id: &str, stream: &StreamId) -> Result<&RssiHistogram> {
        let l = self
            .location_index(location_id)
            .ok_or_else(|| Error::UnknownLocation(location_id.to_string()))?;
        let s = self
            .stream_index(stream)
            .ok_or_else(|| Error::UnknownStream(stream.clone()))?;
        Ok(self.histogram_at(l, s))
    }

    /// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)` of the
    /// calibrated locations.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.locations.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(x0, y0, x1, y1), l| (x0.min(l.x), y0.min(l.y), x1.max(l.x), y1.max(l.y)),
        )
    }
}

pub(crate) fn check_unique_streams(streams: &[StreamId]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in streams {
        if !seen.insert(s) {
            return Err(Error::DuplicateStream(s.clone()));
        }
    }
    Ok(())
}

/// The `m` most recent samples of each stream used for one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    streams: Vec<(StreamId, Vec<i32>)>,
    m: usize,
}

impl SignalWindow {
    pub fn new(streams: Vec<(StreamId, Vec<i32>)>) -> Result<Self> {
        let m = streams.first().map(|(_, v)| v.len()).unwrap_or(0);
        if m == 0 {
            return Err(Error::EmptyWindow);
        }
        for (stream, values) in &streams {
            if values.len() != m {
                return Err(Error::WindowLength {
                    stream: stream.clone(),
                    got: values.len(),
                    expected: m,
                });
            }
        }
        let ids: Vec<StreamId> = streams.iter().map(|(s, _)| s.clone()).collect();
        check_unique_streams(&ids)?;
        Ok(Self { streams, m })
    }

    /// Window with a single sample per stream.
    pub fn single(samples: impl IntoIterator<Item = (StreamId, i32)>) -> Result<Self> {
        Self::new(samples.into_iter().map(|(s, v)| (s, vec![v])).collect())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamId> {
        self.streams.iter().map(|(s, _)| s)
    }

    pub fn values(&self, stream: &StreamId) -> Option<&[i32]> {
        self.streams
            .iter()
            .find(|(s, _)| s == stream)
            .map(|(_, v)| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StreamId, &[i32])> {
        self.streams.iter().map(|(s, v)| (s, v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let o = Location::new("o", 0.0, 0.0);
        assert_eq!(euclidean_distance(&o, &o), 0.0);
        assert_eq!(euclidean_distance(&o, &Location::new("b", 3.0, 4.0)), 5.0);
        let a = Location::new("a", 1.5, 2.0);
        let b = Location::new("b", 4.5, 6.0);
        assert_eq!(euclidean_distance(&a, &b), 5.0);
    }

    #[test]
    fn stream_id_parses() {
        let s: StreamId = "AP1:MP2".parse().unwrap();
        assert_eq!(s, StreamId::new("AP1", "MP2"));
        assert_eq!(s.to_string(), "AP1:MP2");
        assert!("AP1".parse::<StreamId>().is_err());
        assert!("a:b:c".parse::<StreamId>().is_err());
    }

    #[test]
    fn window_rejects_ragged_streams() {
        let err = SignalWindow::new(vec![
            (StreamId::new("a", "m"), vec![-40, -41]),
            (StreamId::new("b", "m"), vec![-40]),
        ])
        .unwrap_err();
        assert!(matches!(
            err,
            Error::WindowLength {
                got: 1,
                expected: 2,
                ..
            }
        ));
        assert!(matches!(SignalWindow::new(vec![]), Err(Error::EmptyWindow)));
    }

    #[test]
    fn histogram_from_parts_validates() {
        let range = RssiRange::new(-2, 0).unwrap();
        assert!(RssiHistogram::from_parts(range, vec![0.5, 0.25, 0.25], 4, -1.0).is_ok());
        assert!(RssiHistogram::from_parts(range, vec![0.5, 0.5, 0.0], 4, -1.0).is_err());
        assert!(RssiHistogram::from_parts(range, vec![0.5, 0.25, 0.2], 4, -1.0).is_err());
        assert!(RssiHistogram::from_parts(range, vec![0.5, 0.5], 4, -1.0).is_err());
    }

    fn point() -> impl Strategy<Value = Location> {
        (-1e3..1e3f64, -1e3..1e3f64).prop_map(|(x, y)| Location::new("p", x, y))
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in point(), b in point(), c in point()) {
            let ab = euclidean_distance(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, euclidean_distance(&b, &a));
            let ac = euclidean_distance(&a, &c);
            let cb = euclidean_distance(&c, &b);
            prop_assert!(ab <= ac + cb + 1e-9);
        }
    }
}
