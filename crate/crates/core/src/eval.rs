//! Evaluation harness: distance-error summaries and parameter sweeps.

use itertools::Itertools;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    discrete_estimate, nearest_in_signal_space, posterior, signal_space_distances, EstimatorConfig,
    RandomEstimator,
};
use crate::postprocess::{
    center_of_mass, spatial_average, ContinuousConfig, EstimateHistory, EstimatePoint,
};
use crate::simulator::derive_seed;
use crate::types::{
    euclidean_distance, Location, PassiveRadioMap, RssiSample, SignalWindow, StreamId,
};

/// An online-phase recording with its ground-truth position.
#[derive(Debug, Clone, PartialEq)]
pub struct TestTrace {
    pub id: String,
    pub ground_truth: Location,
    pub samples: Vec<RssiSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Probabilistic,
    Deterministic,
    Random,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::Probabilistic,
        EstimatorKind::Deterministic,
        EstimatorKind::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Probabilistic => "probabilistic",
            EstimatorKind::Deterministic => "deterministic",
            EstimatorKind::Random => "random",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probabilistic" => Ok(EstimatorKind::Probabilistic),
            "deterministic" => Ok(EstimatorKind::Deterministic),
            "random" => Ok(EstimatorKind::Random),
            other => Err(Error::InvalidParams(format!("unknown estimator `{other}`"))),
        }
    }
}

/// How a trace is cut into windows of `m` samples per stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowMode {
    /// Consecutive, non-overlapping windows.
    #[default]
    Block,
    /// Stride 1: each window adds one new sample to the previous m - 1.
    Moving,
}

impl WindowMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            WindowMode::Block => "block",
            WindowMode::Moving => "moving",
        }
    }
}

impl std::str::FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(WindowMode::Block),
            "moving" => Ok(WindowMode::Moving),
            other => Err(Error::InvalidParams(format!(
                "unknown window mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub estimator: EstimatorKind,
    pub est: EstimatorConfig,
    /// `None` evaluates the discrete estimate directly.
    pub continuous: Option<ContinuousConfig>,
    pub window_mode: WindowMode,
    /// Seed for the random baseline.
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(estimator: EstimatorKind, est: EstimatorConfig) -> Self {
        Self {
            estimator,
            est,
            continuous: None,
            window_mode: WindowMode::Block,
            seed: 0,
        }
    }

    pub fn continuous(mut self, config: ContinuousConfig) -> Self {
        self.continuous = Some(config);
        self
    }
}

/// Sorted distance errors with their empirical CDF and quartiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub errors: Vec<f64>,
    /// `(error, fraction of errors <= error)`, one point per distinct error.
    pub cdf_points: Vec<(f64, f64)>,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

impl ErrorSummary {
    pub fn from_errors(mut errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyErrors);
        }
        errors.sort_by(f64::total_cmp);
        let n = errors.len() as f64;
        let mut cdf_points: Vec<(f64, f64)> = Vec::new();
        for (i, &e) in errors.iter().enumerate() {
            let frac = (i + 1) as f64 / n;
            match cdf_points.last_mut() {
                Some(last) if last.0 == e => last.1 = frac,
                _ => cdf_points.push((e, frac)),
            }
        }
        Ok(Self {
            p25: percentile(&errors, 0.25)?,
            p50: percentile(&errors, 0.5)?,
            p75: percentile(&errors, 0.75)?,
            errors,
            cdf_points,
        })
    }

    /// Fraction of estimates with zero error.
    pub fn exact_fraction(&self) -> f64 {
        self.errors.iter().filter(|&&e| e == 0.0).count() as f64 / self.errors.len() as f64
    }
}

/// Nearest-rank percentile of an ascending list: the `ceil(p * N)`-th
/// smallest element, and the first element for `p = 0`.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyErrors);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidFraction(p));
    }
    // guard against p * N landing a hair above an integer
    let rank = (p * sorted.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

/// Per-stream sample values of a trace, in sample order.
fn stream_values(trace: &TestTrace, streams: &[StreamId]) -> Vec<Vec<i32>> {
    let mut values = vec![Vec::new(); streams.len()];
    for s in &trace.samples {
        if let Some(i) = streams.iter().position(|id| *id == s.stream) {
            values[i].push(s.value);
        }
    }
    values
}

/// Cut a trace into signal windows over `streams`.
pub fn windows(
    trace: &TestTrace,
    streams: &[StreamId],
    m: usize,
    mode: WindowMode,
) -> Result<Vec<SignalWindow>> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be >= 1".into()));
    }
    let values = stream_values(trace, streams);
    let (shortest, available) = values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.len()))
        .min_by_key(|&(_, len)| len)
        .ok_or(Error::EmptyWindow)?;
    if available < m {
        return Err(Error::InsufficientSamples {
            trace: trace.id.clone(),
            stream: streams[shortest].clone(),
            available,
            m,
        });
    }
    let starts: Vec<usize> = match mode {
        WindowMode::Block => (0..available / m).map(|j| j * m).collect(),
        WindowMode::Moving => (0..=available - m).collect(),
    };
    starts
        .into_iter()
        .map(|start| {
            SignalWindow::new(
                streams
                    .iter()
                    .zip(&values)
                    .map(|(s, v)| (s.clone(), v[start..start + m].to_vec()))
                    .collect(),
            )
        })
        .collect()
}

/// Evaluate a custom localizer. `make` builds a fresh per-trace localizer,
/// which receives each window in order and returns `(x, y)`.
pub fn evaluate_with<F, L>(
    traces: &[TestTrace],
    streams: &[StreamId],
    m: usize,
    mode: WindowMode,
    make: F,
) -> Result<ErrorSummary>
where
    F: Fn(usize, &TestTrace) -> L + Sync,
    L: FnMut(&SignalWindow) -> Result<(f64, f64)>,
{
    let per_trace = traces
        .par_iter()
        .enumerate()
        .map(|(i, trace)| {
            let mut localize = make(i, trace);
            windows(trace, streams, m, mode)?
                .iter()
                .map(|w| {
                    let (x, y) = localize(w)?;
                    Ok(euclidean_distance(
                        &Location::new("", x, y),
                        &trace.ground_truth,
                    ))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ErrorSummary::from_errors(per_trace.into_iter().flatten().collect())
}

/// Estimator pipeline for one trace, holding that trace's history and,
/// for the random baseline, its generator.
pub struct Localizer<'a> {
    radio_map: &'a PassiveRadioMap,
    config: &'a EvalConfig,
    random: RandomEstimator,
    history: EstimateHistory,
}

impl<'a> Localizer<'a> {
    pub fn new(radio_map: &'a PassiveRadioMap, config: &'a EvalConfig, trace_index: usize) -> Self {
        Self {
            radio_map,
            config,
            random: RandomEstimator::new(
                radio_map,
                derive_seed(config.seed, 3, trace_index as u64),
            ),
            history: EstimateHistory::new(),
        }
    }

    /// Locate the next window of the trace.
    pub fn locate(&mut self, window: &SignalWindow) -> Result<(f64, f64)> {
        let map = self.radio_map;
        let est = &self.config.est;
        let k = self.config.continuous.map_or(1, |c| c.k);
        let point = match self.config.estimator {
            EstimatorKind::Probabilistic => {
                if self.config.continuous.is_some() {
                    let post = posterior(map, window, est)?;
                    spatial_average(&post, map.locations(), k, 0)?
                } else {
                    let (loc, _) = discrete_estimate(map, window, est)?;
                    EstimatePoint {
                        x: loc.x,
                        y: loc.y,
                        t: 0,
                    }
                }
            }
            EstimatorKind::Deterministic => {
                // k nearest neighbours in signal space, equally weighted
                let order = nearest_in_signal_space(&signal_space_distances(map, window, est)?);
                let (x, y) = center_of_mass(order[..k].iter().map(|&i| (1.0, &map.locations()[i])));
                EstimatePoint { x, y, t: 0 }
            }
            EstimatorKind::Random => {
                let loc = self.random.next_estimate();
                EstimatePoint {
                    x: loc.x,
                    y: loc.y,
                    t: 0,
                }
            }
        };
        match self.config.continuous {
            Some(c) => {
                let p = self.history.push_and_average(point, c.w)?;
                Ok((p.x, p.y))
            }
            None => Ok((point.x, point.y)),
        }
    }
}

/// Run an estimator over every window of every test trace and summarize the
/// distance errors. Every trace must fill at least one window.
pub fn evaluate(
    radio_map: &PassiveRadioMap,
    traces: &[TestTrace],
    config: &EvalConfig,
) -> Result<ErrorSummary> {
    config.est.validate(radio_map)?;
    if let Some(c) = config.continuous {
        c.validate(radio_map.locations().len())?;
    }
    evaluate_with(
        traces,
        &config.est.active_streams,
        config.est.m,
        config.window_mode,
        |i, _| {
            let mut run = Localizer::new(radio_map, config, i);
            move |w: &SignalWindow| run.locate(w)
        },
    )
}

/// Like [`evaluate`], but traces too short for one window are skipped and
/// counted instead of failing the run.
pub fn evaluate_lenient(
    radio_map: &PassiveRadioMap,
    traces: &[TestTrace],
    config: &EvalConfig,
) -> Result<(ErrorSummary, usize)> {
    let usable: Vec<TestTrace> = traces
        .iter()
        .filter(|t| {
            stream_values(t, &config.est.active_streams)
                .iter()
                .all(|v| v.len() >= config.est.m)
        })
        .cloned()
        .collect();
    let skipped = traces.len() - usable.len();
    if usable.is_empty() {
        return Err(match traces.first() {
            Some(t) => windows(
                t,
                &config.est.active_streams,
                config.est.m,
                config.window_mode,
            )
            .err()
            .unwrap_or(Error::EmptyErrors),
            None => Error::EmptyErrors,
        });
    }
    Ok((evaluate(radio_map, &usable, config)?, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    M,
    Streams,
    K,
    W,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::M => "m",
            SweepParam::Streams => "n",
            SweepParam::K => "k",
            SweepParam::W => "w",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(SweepParam::M),
            "n" | "streams" => Ok(SweepParam::Streams),
            "k" => Ok(SweepParam::K),
            "w" => Ok(SweepParam::W),
            other => Err(Error::InvalidParams(format!(
                "unknown sweep parameter `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: usize,
    pub summary: ErrorSummary,
    /// Traces dropped because they could not fill one window.
    pub skipped: usize,
    /// Winning stream subset, for stream sweeps.
    pub best_subset: Option<Vec<StreamId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParam,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn p50s(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.summary.p50).collect()
    }
}

fn sweep_values<F>(parameter: SweepParam, grid: &[usize], run: F) -> Result<SweepResult>
where
    F: Fn(usize) -> Result<(ErrorSummary, usize)> + Sync,
{
    if grid.is_empty() {
        return Err(Error::InvalidParams("empty sweep grid".into()));
    }
    let points = grid
        .par_iter()
        .map(|&value| {
            let (summary, skipped) = run(value)?;
            Ok(SweepPoint {
                value,
                summary,
                skipped,
                best_subset: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { parameter, points })
}

/// One summary per `m`; traces shorter than `m` are skipped and counted.
pub fn sweep_m(
    radio_map: &PassiveRadioMap,
    traces: &[TestTrace],
    m_grid: &[usize],
    config: &EvalConfig,
) -> Result<SweepResult> {
    if m_grid.contains(&0) {
        return Err(Error::InvalidConfig("m must be >= 1".into()));
    }
    sweep_values(SweepParam::M, m_grid, |m| {
        let mut cfg = config.clone();
        cfg.est.m = m;
        evaluate_lenient(radio_map, traces, &cfg)
    })
}

/// For each `n = 1..=q`, evaluate every n-subset of the radio map's streams
/// and keep the one with the lowest median error (first in enumeration order
/// on ties).
pub fn sweep_streams(
    radio_map: &PassiveRadioMap,
    traces: &[TestTrace],
    config: &EvalConfig,
) -> Result<SweepResult> {
    let streams = radio_map.streams();
    let points = (1..=streams.len())
        .map(|n| {
            let subsets: Vec<Vec<StreamId>> = streams.iter().cloned().combinations(n).collect();
            let results = subsets
                .par_iter()
                .map(|subset| {
                    let mut cfg = config.clone();
                    cfg.est.active_streams = subset.clone();
                    evaluate(radio_map, traces, &cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            let (best, summary) = results
                .into_iter()
                .enumerate()
                .reduce(|a, b| if b.1.p50 < a.1.p50 { b } else { a })
                .expect("at least one subset");
            Ok(SweepPoint {
                value: n,
                summary,
                skipped: 0,
                best_subset: Some(subsets[best].clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        parameter: SweepParam::Streams,
        points,
    })
}

/// Number of n-subsets evaluated by [`sweep_streams`] for each n.
pub fn subset_counts(q: usize) -> Vec<usize> {
    (1..=q).map(|n| (0..q).combinations(n).count()).collect()
}

/// Continuous pipeline swept over `k` (w from `config`, default if unset).
pub fn sweep_k(
    radio_map: &PassiveRadioMap,
    traces: &[TestTrace],
    k_grid: &[usize],
    config: &EvalConfig,
) -> Result<SweepResult> {
    let base = config.continuous.unwrap_or_default();
    for &k in k_grid {
        ContinuousConfig { k, ..base }.validate(radio_map.locations().len())?;
    }
    sweep_values(SweepParam::K, k_grid, |k| {
        let cfg = config.clone().continuous(ContinuousConfig { k, ..base });
        Ok((evaluate(radio_map, traces, &cfg)?, 0))
    })
}

/// Continuous pipeline swept over `w` (k from `config`, default if unset).
pub fn sweep_w(
    radio_map: &PassiveRadioMap,
    traces: &[TestTrace],
    w_grid: &[usize],
    config: &EvalConfig,
) -> Result<SweepResult> {
    let base = config.continuous.unwrap_or_default();
    for &w in w_grid {
        ContinuousConfig { w, ..base }.validate(radio_map.locations().len())?;
    }
    sweep_values(SweepParam::W, w_grid, |w| {
        let cfg = config.clone().continuous(ContinuousConfig { w, ..base });
        Ok((evaluate(radio_map, traces, &cfg)?, 0))
    })
}

/// Quartile table with each row's degradation relative to the first row.
pub fn format_table(title: &str, rows: &[(&str, &ErrorSummary)]) -> String {
    let mut out = format!("{title}\n");
    out.push_str(&format!(
        "{:<16}{:>18}{:>18}{:>18}\n",
        "Technique", "25th perc.", "50th perc.", "75th perc."
    ));
    let base = rows.first().map(|r| r.1);
    for (i, (name, s)) in rows.iter().enumerate() {
        let cell = |value: f64, reference: Option<f64>| match reference {
            Some(r) if i > 0 && r > 0.0 => format!("{value:.2}m ({:.1}x)", value / r),
            _ => format!("{value:.2}m"),
        };
        out.push_str(&format!(
            "{:<16}{:>18}{:>18}{:>18}\n",
            name,
            cell(s.p25, base.map(|b| b.p25)),
            cell(s.p50, base.map(|b| b.p50)),
            cell(s.p75, base.map(|b| b.p75)),
        ));
    }
    out
}
