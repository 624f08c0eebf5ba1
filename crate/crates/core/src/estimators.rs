//! Discrete-space estimators: the Bayesian histogram estimator and the
//! nearest-mean and random baselines.
//!
//! All likelihood arithmetic happens in the log domain. At default settings a
//! single estimate multiplies 6 x 26 probabilities, which underflows `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Location, PassiveRadioMap, SignalWindow, StreamId};

/// Samples per stream per estimate unless configured otherwise.
pub const DEFAULT_M: usize = 26;

/// Log scores this close to the maximum count as tied with it. Equal
/// likelihoods reached through different summation orders can differ in the
/// last bits; this is far below any meaningful likelihood ratio.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// How equal scores are resolved. Locations are ordered by id in the radio
/// map, so the lowest id is the first index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestId,
}

/// Prior probability of the entity being at each calibrated location.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Prior {
    #[default]
    Uniform,
    /// Positive weights in radio-map location order; need not sum to one.
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Samples per stream per estimate.
    pub m: usize,
    pub active_streams: Vec<StreamId>,
    pub tie_break: TieBreak,
    pub prior: Prior,
}

impl EstimatorConfig {
    /// Uses every stream of the radio map.
    pub fn new(radio_map: &PassiveRadioMap, m: usize) -> Self {
        Self {
            m,
            active_streams: radio_map.streams().to_vec(),
            tie_break: TieBreak::LowestId,
            prior: Prior::Uniform,
        }
    }

    pub fn with_streams(mut self, streams: Vec<StreamId>) -> Self {
        self.active_streams = streams;
        self
    }

    pub fn validate(&self, radio_map: &PassiveRadioMap) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be >= 1".into()));
        }
        if self.active_streams.is_empty() {
            return Err(Error::InvalidConfig("no active streams".into()));
        }
        crate::types::check_unique_streams(&self.active_streams)?;
        for s in &self.active_streams {
            if radio_map.stream_index(s).is_none() {
                return Err(Error::UnknownStream(s.clone()));
            }
        }
        if let Prior::Weights(w) = &self.prior {
            if w.len() != radio_map.locations().len()
                || w.iter().any(|p| !(*p > 0.0 && p.is_finite()))
            {
                return Err(Error::InvalidPrior {
                    got: w.len(),
                    expected: radio_map.locations().len(),
                });
            }
        }
        Ok(())
    }
}

/// Per-location log scores and the normalized posterior, in radio-map order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorVector {
    ids: Vec<String>,
    log_scores: Vec<f64>,
    normalized: Vec<f64>,
}

impl PosteriorVector {
    /// Normalize log scores with a max-shifted softmax.
    pub fn from_log_scores(ids: Vec<String>, log_scores: Vec<f64>) -> Self {
        let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let normalized = exp.into_iter().map(|e| e / total).collect();
        Self {
            ids,
            log_scores,
            normalized,
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Log-likelihood plus log prior (the prior term is omitted when uniform).
    pub fn log_scores(&self) -> &[f64] {
        &self.log_scores
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn probability(&self, id: &str) -> Option<f64> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|i| self.normalized[i])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Index of the highest score; the first (lowest id) of the scores
    /// within [`TIE_TOLERANCE`] of the maximum wins.
    pub fn argmax(&self) -> usize {
        let max = self
            .log_scores
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.log_scores
            .iter()
            .position(|&s| s >= max - TIE_TOLERANCE)
            .unwrap_or(0)
    }

    /// Location indices by descending score, ties by ascending index, with
    /// [`argmax`](Self::argmax) first.
    pub fn ranked(&self) -> Vec<usize> {
        if self.log_scores.is_empty() {
            return Vec::new();
        }
        let best = self.argmax();
        let mut rest: Vec<usize> = (0..self.log_scores.len()).filter(|&i| i != best).collect();
        rest.sort_by(|&a, &b| {
            self.log_scores[b]
                .total_cmp(&self.log_scores[a])
                .then(a.cmp(&b))
        });
        std::iter::once(best).chain(rest).collect()
    }
}

/// Window streams resolved to radio-map indices, trimmed to the last `m`
/// samples and range-checked.
pub(crate) struct ResolvedWindow<'a> {
    pub streams: Vec<usize>,
    pub values: Vec<&'a [i32]>,
    /// Per stream, each distinct value with its multiplicity.
    pub counts: Vec<Vec<(i32, u32)>>,
}

impl<'a> ResolvedWindow<'a> {
    fn resolve<'s>(
        radio_map: &PassiveRadioMap,
        window: &'a SignalWindow,
        streams: impl Iterator<Item = &'s StreamId>,
        m: usize,
    ) -> Result<Self> {
        let range = radio_map.rssi_range();
        let mut resolved = ResolvedWindow {
            streams: Vec::new(),
            values: Vec::new(),
            counts: Vec::new(),
        };
        for stream in streams {
            let idx = radio_map
                .stream_index(stream)
                .ok_or_else(|| Error::UnknownStream(stream.clone()))?;
            let values = window
                .values(stream)
                .ok_or_else(|| Error::UnknownStream(stream.clone()))?;
            if values.len() < m {
                return Err(Error::InsufficientSamples {
                    trace: "window".into(),
                    stream: stream.clone(),
                    available: values.len(),
                    m,
                });
            }
            let values = &values[values.len() - m..];
            if let Some(&v) = values.iter().find(|v| !range.contains(**v)) {
                return Err(Error::OutOfRangeValue {
                    value: v,
                    min: range.min,
                    max: range.max,
                });
            }
            let mut sorted = values.to_vec();
            sorted.sort_unstable();
            let counts = sorted
                .chunk_by(|a, b| a == b)
                .map(|run| (run[0], run.len() as u32))
                .collect();
            resolved.streams.push(idx);
            resolved.values.push(values);
            resolved.counts.push(counts);
        }
        Ok(resolved)
    }

    fn for_config(
        radio_map: &PassiveRadioMap,
        window: &'a SignalWindow,
        config: &EstimatorConfig,
    ) -> Result<Self> {
        config.validate(radio_map)?;
        Self::resolve(radio_map, window, config.active_streams.iter(), config.m)
    }

    /// Sum over streams of `count * ln p(value)` for each distinct value.
    fn log_likelihood(&self, radio_map: &PassiveRadioMap, location: usize) -> f64 {
        let mut total = 0.0;
        for (&s, counts) in self.streams.iter().zip(&self.counts) {
            let h = radio_map.histogram_at(location, s);
            let mut stream_total = 0.0;
            for &(v, n) in counts {
                // range checked during resolution
                stream_total += f64::from(n) * h.log_probability(v).unwrap();
            }
            total += stream_total;
        }
        total
    }
}

/// Natural log of the product of per-sample histogram probabilities over
/// every stream and sample in `window`.
pub fn log_likelihood(
    radio_map: &PassiveRadioMap,
    window: &SignalWindow,
    location: &Location,
) -> Result<f64> {
    let l = radio_map
        .location_index(&location.id)
        .ok_or_else(|| Error::UnknownLocation(location.id.clone()))?;
    let resolved = ResolvedWindow::resolve(radio_map, window, window.streams(), window.m())?;
    Ok(resolved.log_likelihood(radio_map, l))
}

/// Posterior over every calibrated location.
pub fn posterior(
    radio_map: &PassiveRadioMap,
    window: &SignalWindow,
    config: &EstimatorConfig,
) -> Result<PosteriorVector> {
    let resolved = ResolvedWindow::for_config(radio_map, window, config)?;
    let mut scores: Vec<f64> = (0..radio_map.locations().len())
        .map(|l| resolved.log_likelihood(radio_map, l))
        .collect();
    if let Prior::Weights(w) = &config.prior {
        for (s, p) in scores.iter_mut().zip(w) {
            *s += p.ln();
        }
    }
    let ids = radio_map.locations().iter().map(|l| l.id.clone()).collect();
    Ok(PosteriorVector::from_log_scores(ids, scores))
}

/// The calibrated location maximizing the posterior, with the full posterior.
pub fn discrete_estimate(
    radio_map: &PassiveRadioMap,
    window: &SignalWindow,
    config: &EstimatorConfig,
) -> Result<(Location, PosteriorVector)> {
    let post = posterior(radio_map, window, config)?;
    let best = match config.tie_break {
        TieBreak::LowestId => post.argmax(),
    };
    Ok((radio_map.locations()[best].clone(), post))
}

/// Squared signal-space distance from the window's per-stream means to each
/// location's stored training means, in radio-map order.
pub fn signal_space_distances(
    radio_map: &PassiveRadioMap,
    window: &SignalWindow,
    config: &EstimatorConfig,
) -> Result<Vec<f64>> {
    let resolved = ResolvedWindow::for_config(radio_map, window, config)?;
    let means: Vec<f64> = resolved
        .values
        .iter()
        .map(|v| v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64)
        .collect();
    Ok((0..radio_map.locations().len())
        .map(|l| {
            resolved
                .streams
                .iter()
                .zip(&means)
                .map(|(&s, mean)| {
                    let d = mean - radio_map.histogram_at(l, s).mean_rssi();
                    d * d
                })
                .sum()
        })
        .collect())
}

/// Location indices by ascending signal-space distance, ties by index.
pub fn nearest_in_signal_space(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

/// Nearest-mean baseline: the location whose training mean vector is
/// closest to the mean of the window samples.
pub fn deterministic_estimate(
    radio_map: &PassiveRadioMap,
    window: &SignalWindow,
    config: &EstimatorConfig,
) -> Result<Location> {
    let distances = signal_space_distances(radio_map, window, config)?;
    let best = match config.tie_break {
        TieBreak::LowestId => nearest_in_signal_space(&distances)[0],
    };
    Ok(radio_map.locations()[best].clone())
}

/// Axis-aligned box of the calibrated area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn of(radio_map: &PassiveRadioMap) -> Self {
        let (min_x, min_y, max_x, max_y) = radio_map.bounding_box();
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Location {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        Location::new(
            "random",
            self.min_x + (self.max_x - self.min_x) * u,
            self.min_y + (self.max_y - self.min_y) * v,
        )
    }
}

/// Random baseline: uniform draws from the calibrated area's bounding box.
#[derive(Debug, Clone)]
pub struct RandomEstimator {
    area: BoundingBox,
    rng: ChaCha8Rng,
}

impl RandomEstimator {
    pub fn new(radio_map: &PassiveRadioMap, seed: u64) -> Self {
        Self {
            area: BoundingBox::of(radio_map),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_estimate(&mut self) -> Location {
        self.area.sample(&mut self.rng)
    }
}

/// A single random-baseline estimate.
pub fn random_estimate(radio_map: &PassiveRadioMap, seed: u64) -> Result<Location> {
    if radio_map.locations().is_empty() {
        return Err(Error::EmptyRadioMap);
    }
    Ok(RandomEstimator::new(radio_map, seed).next_estimate())
}
