//! Python bindings for `dfploc`.
//!
//! Streams are passed as `"AP:MP"` strings and signal windows as dicts
//! mapping a stream to its list of integer dBm samples.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use dfploc::estimators::{deterministic_estimate, DEFAULT_M};
use dfploc::eval::{sweep_k, sweep_m, sweep_streams, sweep_w, SweepParam};
use dfploc::format::{load_radio_map, parse_radio_map, radio_map_to_string, save_radio_map};
use dfploc::postprocess::EstimateHistory;
use dfploc::simulator::{generate_environment_with, test_traces, training_traces, Preset};
use dfploc::{
    build_radio_map, continuous_estimate, discrete_estimate, evaluate, log_likelihood,
    random_estimate, ContinuousConfig, Error, ErrorSummary, EstimatorConfig, EstimatorKind,
    EvalConfig, Location, PassiveRadioMap, RssiRange, RssiSample, SignalWindow, SmoothingConfig,
    SmoothingMode, StreamId, TestTrace, TrainingTrace, WindowMode,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn streams_from(names: &[String]) -> PyResult<Vec<StreamId>> {
    names.iter().map(|s| parse(s)).collect()
}

fn window_from(window: HashMap<String, Vec<i32>>) -> PyResult<SignalWindow> {
    let mut pairs = window
        .into_iter()
        .map(|(k, v)| Ok((parse::<StreamId>(&k)?, v)))
        .collect::<PyResult<Vec<_>>>()?;
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    SignalWindow::new(pairs).map_err(to_py)
}

#[pyclass(name = "Location", frozen, eq, skip_from_py_object, module = "dfploc")]
#[derive(Clone, PartialEq)]
struct PyLocation {
    #[pyo3(get)]
    id: String,
    #[pyo3(get)]
    x: f64,
    #[pyo3(get)]
    y: f64,
}

#[pymethods]
impl PyLocation {
    #[new]
    fn new(id: String, x: f64, y: f64) -> Self {
        Self { id, x, y }
    }

    fn __repr__(&self) -> String {
        format!("Location({:?}, {}, {})", self.id, self.x, self.y)
    }
}

impl From<&Location> for PyLocation {
    fn from(l: &Location) -> Self {
        Self {
            id: l.id.clone(),
            x: l.x,
            y: l.y,
        }
    }
}

impl PyLocation {
    fn inner(&self) -> Location {
        Location::new(self.id.clone(), self.x, self.y)
    }
}

/// RSS samples recorded with the entity at one location.
#[pyclass(name = "Trace", frozen, module = "dfploc")]
struct PyTrace {
    location: Location,
    samples: Vec<RssiSample>,
}

#[pymethods]
impl PyTrace {
    /// `samples` is a list of `(stream, dBm, timestamp_s)` tuples.
    #[new]
    fn new(location: PyRef<'_, PyLocation>, samples: Vec<(String, i32, f64)>) -> PyResult<Self> {
        let samples = samples
            .into_iter()
            .map(|(s, value, timestamp)| {
                Ok(RssiSample {
                    stream: parse(&s)?,
                    value,
                    timestamp,
                })
            })
            .collect::<PyResult<_>>()?;
        Ok(Self {
            location: location.inner(),
            samples,
        })
    }

    #[getter]
    fn location(&self) -> PyLocation {
        (&self.location).into()
    }

    #[getter]
    fn samples(&self) -> Vec<(String, i32, f64)> {
        self.samples
            .iter()
            .map(|s| (s.stream.to_string(), s.value, s.timestamp))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.samples.len()
    }
}

impl PyTrace {
    fn training(&self) -> TrainingTrace {
        TrainingTrace {
            location: self.location.clone(),
            samples: self.samples.clone(),
        }
    }

    fn test(&self) -> TestTrace {
        TestTrace {
            id: self.location.id.clone(),
            ground_truth: self.location.clone(),
            samples: self.samples.clone(),
        }
    }
}

/// Training and test traces drawn from a seeded synthetic environment.
#[pyclass(name = "Simulation", frozen, module = "dfploc")]
struct PySimulation {
    #[pyo3(get)]
    streams: Vec<String>,
    #[pyo3(get)]
    rssi_range: (i32, i32),
    #[pyo3(get)]
    training: Vec<Py<PyTrace>>,
    #[pyo3(get)]
    tests: Vec<Py<PyTrace>>,
}

#[pyfunction]
#[pyo3(signature = (preset = "realistic", seed = 1, n = 6, duration = 60.0, rate = 5.0))]
fn simulate(
    py: Python<'_>,
    preset: &str,
    seed: u64,
    n: usize,
    duration: f64,
    rate: f64,
) -> PyResult<PySimulation> {
    let mut params = parse::<Preset>(preset)?.params(seed);
    params.n_streams = n;
    let env = generate_environment_with(&params).map_err(to_py)?;
    let training = training_traces(&env, duration, rate)
        .map_err(to_py)?
        .into_iter()
        .map(|t| {
            Py::new(
                py,
                PyTrace {
                    location: t.location,
                    samples: t.samples,
                },
            )
        })
        .collect::<PyResult<_>>()?;
    let tests = test_traces(&env, duration, rate)
        .map_err(to_py)?
        .into_iter()
        .map(|t| {
            Py::new(
                py,
                PyTrace {
                    location: t.ground_truth,
                    samples: t.samples,
                },
            )
        })
        .collect::<PyResult<_>>()?;
    Ok(PySimulation {
        streams: env.streams.iter().map(ToString::to_string).collect(),
        rssi_range: (env.rssi_range.min, env.rssi_range.max),
        training,
        tests,
    })
}

#[pyclass(name = "RadioMap", frozen, module = "dfploc")]
struct PyRadioMap {
    map: Arc<PassiveRadioMap>,
}

#[pymethods]
impl PyRadioMap {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            map: Arc::new(load_radio_map(&path).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn from_string(text: &str) -> PyResult<Self> {
        Ok(Self {
            map: Arc::new(parse_radio_map(text, "<string>".as_ref()).map_err(to_py)?),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_radio_map(&self.map, &path).map_err(to_py)
    }

    fn to_string(&self) -> PyResult<String> {
        radio_map_to_string(&self.map).map_err(to_py)
    }

    #[getter]
    fn locations(&self) -> Vec<PyLocation> {
        self.map.locations().iter().map(Into::into).collect()
    }

    #[getter]
    fn streams(&self) -> Vec<String> {
        self.map.streams().iter().map(ToString::to_string).collect()
    }

    #[getter]
    fn rssi_range(&self) -> (i32, i32) {
        let r = self.map.rssi_range();
        (r.min, r.max)
    }

    /// Probabilities of every dBm value in the range, lowest first.
    fn histogram(&self, location_id: &str, stream: &str) -> PyResult<Vec<f64>> {
        let h = self
            .map
            .histogram(location_id, &parse(stream)?)
            .map_err(to_py)?;
        Ok(h.probabilities().to_vec())
    }

    fn sample_count(&self, location_id: &str, stream: &str) -> PyResult<usize> {
        let h = self
            .map
            .histogram(location_id, &parse(stream)?)
            .map_err(to_py)?;
        Ok(h.sample_count())
    }

    fn __len__(&self) -> usize {
        self.map.locations().len()
    }

    fn __eq__(&self, other: PyRef<'_, PyRadioMap>) -> bool {
        self.map == other.map
    }
}

#[pyfunction]
#[pyo3(signature = (traces, streams, rssi_range = (-100, 0), smoothing = "additive", floor = 1e-3))]
fn build(
    traces: Vec<PyRef<'_, PyTrace>>,
    streams: Vec<String>,
    rssi_range: (i32, i32),
    smoothing: &str,
    floor: f64,
) -> PyResult<PyRadioMap> {
    let training: Vec<TrainingTrace> = traces.iter().map(|t| t.training()).collect();
    let range = RssiRange::new(rssi_range.0, rssi_range.1).map_err(to_py)?;
    let config = SmoothingConfig {
        floor,
        mode: parse::<SmoothingMode>(smoothing)?,
    };
    let map = build_radio_map(&training, &streams_from(&streams)?, range, config).map_err(to_py)?;
    Ok(PyRadioMap { map: Arc::new(map) })
}

fn estimator_config(
    map: &PassiveRadioMap,
    m: Option<usize>,
    streams: Option<Vec<String>>,
    window: &SignalWindow,
) -> PyResult<EstimatorConfig> {
    let config = EstimatorConfig::new(map, m.unwrap_or(window.m()));
    Ok(match streams {
        Some(s) => config.with_streams(streams_from(&s)?),
        None => config.with_streams(window.streams().cloned().collect()),
    })
}

/// Most probable location and the posterior as `{location_id: probability}`.
#[pyfunction]
#[pyo3(signature = (radio_map, window, m = None, streams = None))]
fn estimate(
    radio_map: PyRef<'_, PyRadioMap>,
    window: HashMap<String, Vec<i32>>,
    m: Option<usize>,
    streams: Option<Vec<String>>,
) -> PyResult<(PyLocation, HashMap<String, f64>)> {
    let window = window_from(window)?;
    let config = estimator_config(&radio_map.map, m, streams, &window)?;
    let (loc, post) = discrete_estimate(&radio_map.map, &window, &config).map_err(to_py)?;
    let probs = post
        .ids()
        .iter()
        .cloned()
        .zip(post.normalized().iter().copied())
        .collect();
    Ok(((&loc).into(), probs))
}

#[pyfunction]
fn likelihood(
    radio_map: PyRef<'_, PyRadioMap>,
    window: HashMap<String, Vec<i32>>,
    location_id: &str,
) -> PyResult<f64> {
    let window = window_from(window)?;
    let map = &radio_map.map;
    let loc = map
        .location_index(location_id)
        .map(|i| map.locations()[i].clone())
        .ok_or_else(|| to_py(Error::UnknownLocation(location_id.to_string())))?;
    log_likelihood(map, &window, &loc).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (radio_map, window, m = None, streams = None))]
fn estimate_deterministic(
    radio_map: PyRef<'_, PyRadioMap>,
    window: HashMap<String, Vec<i32>>,
    m: Option<usize>,
    streams: Option<Vec<String>>,
) -> PyResult<PyLocation> {
    let window = window_from(window)?;
    let config = estimator_config(&radio_map.map, m, streams, &window)?;
    let loc = deterministic_estimate(&radio_map.map, &window, &config).map_err(to_py)?;
    Ok((&loc).into())
}

#[pyfunction]
fn estimate_random(radio_map: PyRef<'_, PyRadioMap>, seed: u64) -> PyResult<PyLocation> {
    let loc = random_estimate(&radio_map.map, seed).map_err(to_py)?;
    Ok((&loc).into())
}

/// Continuous-space tracker for one trace: discrete posterior, top-k center
/// of mass, then a moving average over the last w estimates.
#[pyclass(name = "ContinuousTracker", module = "dfploc")]
struct PyContinuousTracker {
    map: Arc<PassiveRadioMap>,
    config: ContinuousConfig,
    m: Option<usize>,
    history: EstimateHistory,
}

#[pymethods]
impl PyContinuousTracker {
    #[new]
    #[pyo3(signature = (radio_map, k = 2, w = 5, m = None))]
    fn new(
        radio_map: PyRef<'_, PyRadioMap>,
        k: usize,
        w: usize,
        m: Option<usize>,
    ) -> PyResult<Self> {
        let config = ContinuousConfig { k, w };
        config
            .validate(radio_map.map.locations().len())
            .map_err(to_py)?;
        Ok(Self {
            map: Arc::clone(&radio_map.map),
            config,
            m,
            history: EstimateHistory::new(),
        })
    }

    /// Add a window and return the smoothed `(x, y)`.
    fn update(&mut self, window: HashMap<String, Vec<i32>>) -> PyResult<(f64, f64)> {
        let window = window_from(window)?;
        let est = estimator_config(&self.map, self.m, None, &window)?;
        let p = continuous_estimate(&self.map, &window, &est, &self.config, &mut self.history)
            .map_err(to_py)?;
        Ok((p.x, p.y))
    }

    fn __len__(&self) -> usize {
        self.history.len()
    }
}

#[pyclass(name = "Summary", frozen, module = "dfploc")]
struct PySummary {
    #[pyo3(get)]
    errors: Vec<f64>,
    #[pyo3(get)]
    cdf: Vec<(f64, f64)>,
    #[pyo3(get)]
    p25: f64,
    #[pyo3(get)]
    p50: f64,
    #[pyo3(get)]
    p75: f64,
}

#[pymethods]
impl PySummary {
    fn __repr__(&self) -> String {
        format!(
            "Summary(p25={:.3}, p50={:.3}, p75={:.3}, n={})",
            self.p25,
            self.p50,
            self.p75,
            self.errors.len()
        )
    }
}

impl From<ErrorSummary> for PySummary {
    fn from(s: ErrorSummary) -> Self {
        Self {
            cdf: s.cdf_points,
            errors: s.errors,
            p25: s.p25,
            p50: s.p50,
            p75: s.p75,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn eval_config(
    map: &PassiveRadioMap,
    estimator: &str,
    m: usize,
    streams: Option<Vec<String>>,
    k: Option<usize>,
    w: Option<usize>,
    window_mode: &str,
    seed: u64,
) -> PyResult<EvalConfig> {
    let mut est = EstimatorConfig::new(map, m);
    if let Some(s) = streams {
        est = est.with_streams(streams_from(&s)?);
    }
    let mut config = EvalConfig::new(parse::<EstimatorKind>(estimator)?, est);
    config.window_mode = parse::<WindowMode>(window_mode)?;
    config.seed = seed;
    if k.is_some() || w.is_some() {
        let d = ContinuousConfig::default();
        config = config.continuous(ContinuousConfig {
            k: k.unwrap_or(d.k),
            w: w.unwrap_or(d.w),
        });
    }
    Ok(config)
}

/// Distance-error summary over test traces. Passing `k` or `w` enables the
/// continuous pipeline.
#[pyfunction]
#[pyo3(signature = (radio_map, tests, estimator = "probabilistic", m = DEFAULT_M, streams = None, k = None, w = None, window_mode = "block", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn evaluate_traces(
    py: Python<'_>,
    radio_map: PyRef<'_, PyRadioMap>,
    tests: Vec<PyRef<'_, PyTrace>>,
    estimator: &str,
    m: usize,
    streams: Option<Vec<String>>,
    k: Option<usize>,
    w: Option<usize>,
    window_mode: &str,
    seed: u64,
) -> PyResult<PySummary> {
    let map = Arc::clone(&radio_map.map);
    let traces: Vec<TestTrace> = tests.iter().map(|t| t.test()).collect();
    let config = eval_config(&map, estimator, m, streams, k, w, window_mode, seed)?;
    let summary = py
        .detach(|| evaluate(&map, &traces, &config))
        .map_err(to_py)?;
    Ok(summary.into())
}

/// Grid value, summary and, for stream sweeps, the best subset.
type SweepPoint = (usize, PySummary, Option<Vec<String>>);

/// Sweep one of `m`, `n`, `k`, `w`; returns `(value, Summary, best_subset)`
/// tuples, with `best_subset` only set for stream sweeps.
#[pyfunction]
#[pyo3(signature = (radio_map, tests, parameter, grid = None, estimator = "probabilistic", m = DEFAULT_M, k = None, w = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    radio_map: PyRef<'_, PyRadioMap>,
    tests: Vec<PyRef<'_, PyTrace>>,
    parameter: &str,
    grid: Option<Vec<usize>>,
    estimator: &str,
    m: usize,
    k: Option<usize>,
    w: Option<usize>,
    seed: u64,
) -> PyResult<Vec<SweepPoint>> {
    let map = Arc::clone(&radio_map.map);
    let traces: Vec<TestTrace> = tests.iter().map(|t| t.test()).collect();
    let param = parse::<SweepParam>(parameter)?;
    let needs_grid = || {
        grid.clone().ok_or_else(|| {
            PyValueError::new_err(format!("a grid is required to sweep {parameter}"))
        })
    };
    let continuous = matches!(param, SweepParam::K | SweepParam::W);
    let (k, w) = if continuous {
        (k.or(Some(ContinuousConfig::default().k)), w)
    } else {
        (k, w)
    };
    let config = eval_config(&map, estimator, m, None, k, w, "block", seed)?;
    let result = match param {
        SweepParam::M => {
            let g = needs_grid()?;
            py.detach(|| sweep_m(&map, &traces, &g, &config))
        }
        SweepParam::Streams => py.detach(|| sweep_streams(&map, &traces, &config)),
        SweepParam::K => {
            let g = needs_grid()?;
            py.detach(|| sweep_k(&map, &traces, &g, &config))
        }
        SweepParam::W => {
            let g = needs_grid()?;
            py.detach(|| sweep_w(&map, &traces, &g, &config))
        }
    }
    .map_err(to_py)?;
    Ok(result
        .points
        .into_iter()
        .map(|p| {
            let subset = p
                .best_subset
                .map(|s| s.iter().map(ToString::to_string).collect());
            (p.value, p.summary.into(), subset)
        })
        .collect())
}

#[pymodule]
#[pyo3(name = "dfploc")]
fn dfploc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLocation>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PySimulation>()?;
    m.add_class::<PyRadioMap>()?;
    m.add_class::<PyContinuousTracker>()?;
    m.add_class::<PySummary>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(build, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_deterministic, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_random, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_traces, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
