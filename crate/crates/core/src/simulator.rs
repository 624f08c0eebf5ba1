//! Seeded synthetic RSS environment.
//!
//! Every (location, stream) pair gets a Gaussian RSS distribution. The mean
//! decays with the log-distance between the location and a per-stream
//! anchor; the spread varies smoothly over the floor through a seeded
//! sinusoid. Samples are rounded to integer dBm and clamped to the range.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::eval::TestTrace;
use crate::radiomap::TrainingTrace;
use crate::types::{Location, RssiRange, RssiSample, StreamId};

pub const DEFAULT_RATE_HZ: f64 = 5.0;
pub const DEFAULT_DURATION_S: f64 = 60.0;
pub const DEFAULT_CALIBRATION_LOCATIONS: usize = 53;
pub const DEFAULT_TEST_LOCATIONS: usize = 32;
pub const DEFAULT_STREAMS: usize = 6;
/// Monitoring points per deployment; streams enumerate APs against these.
pub const MONITORING_POINTS: usize = 2;

/// Standard deviation used when `overlap == 0`: neighbours whose integer
/// means differ by 1 dB are then 6 sigma apart.
pub const SEPARABLE_SIGMA_DBM: f64 = 1.0 / 6.0;
/// Overlap of the "realistic" preset.
pub const REALISTIC_OVERLAP: f64 = 1.0;

/// Mean RSS 1 m from a stream's anchor.
const MEAN_AT_1M_DBM: f64 = -50.0;
/// Drop of the mean per decade of distance from the anchor.
const MEAN_SLOPE_DB_PER_DECADE: f64 = 6.25;
/// Per-stream spread is log-uniform over this range before scaling by overlap.
const SPREAD_RANGE: (f64, f64) = (0.5, 4.0);
const SPREAD_VARIATION: f64 = 0.5;

/// Row-major calibration grid, truncated to `count` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    pub spacing_m: f64,
    pub count: usize,
}

impl Default for GridSpec {
    /// 9 x 6 points 6 m apart (about 1440 m^2), first 53 used.
    fn default() -> Self {
        Self {
            cols: 9,
            rows: 6,
            spacing_m: 6.0,
            count: DEFAULT_CALIBRATION_LOCATIONS,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidGrid("zero calibration locations".into()));
        }
        if self.count > self.cols * self.rows {
            return Err(Error::InvalidGrid(format!(
                "{} locations do not fit a {}x{} grid",
                self.count, self.cols, self.rows
            )));
        }
        if !(self.spacing_m > 0.0 && self.spacing_m.is_finite()) {
            return Err(Error::InvalidGrid("spacing must be positive".into()));
        }
        Ok(())
    }

    fn cell(&self, index: usize) -> (usize, usize) {
        (index % self.cols, index / self.cols)
    }

    fn position(&self, index: usize) -> (f64, f64) {
        let (c, r) = self.cell(index);
        (c as f64 * self.spacing_m, r as f64 * self.spacing_m)
    }
}

/// Where test traces are recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestPlacement {
    /// Midpoints between adjacent calibration locations.
    Midpoints,
    /// On a subset of the calibration locations.
    OnGrid,
    /// Uniformly at random over the calibrated area.
    Scattered,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentParams {
    pub grid: GridSpec,
    pub n_streams: usize,
    /// 0 gives well separated distributions; larger values widen every
    /// distribution so neighbouring locations overlap.
    pub overlap: f64,
    pub test_count: usize,
    pub test_placement: TestPlacement,
    pub rssi_range: RssiRange,
    pub seed: u64,
}

impl EnvironmentParams {
    pub fn new(grid: GridSpec, n_streams: usize, overlap: f64, seed: u64) -> Self {
        Self {
            grid,
            n_streams,
            overlap,
            test_count: DEFAULT_TEST_LOCATIONS,
            test_placement: TestPlacement::Midpoints,
            rssi_range: RssiRange::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// No overlap, on-grid test locations.
    Separable,
    /// Overlapping, heteroscedastic distributions, test locations scattered
    /// off the grid.
    Realistic,
}

impl Preset {
    pub fn params(&self, seed: u64) -> EnvironmentParams {
        match self {
            Preset::Separable => EnvironmentParams {
                test_placement: TestPlacement::OnGrid,
                ..EnvironmentParams::new(GridSpec::default(), DEFAULT_STREAMS, 0.0, seed)
            },
            Preset::Realistic => EnvironmentParams {
                test_placement: TestPlacement::Scattered,
                ..EnvironmentParams::new(
                    GridSpec::default(),
                    DEFAULT_STREAMS,
                    REALISTIC_OVERLAP,
                    seed,
                )
            },
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Separable => "separable",
            Preset::Realistic => "realistic",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(Preset::Separable),
            "realistic" => Ok(Preset::Realistic),
            other => Err(Error::InvalidParams(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamDistribution {
    pub mean_dbm: f64,
    pub std_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnvironment {
    pub locations: Vec<Location>,
    pub test_locations: Vec<Location>,
    pub streams: Vec<StreamId>,
    pub rssi_range: RssiRange,
    /// `[location][stream]` for calibration locations.
    pub distributions: Vec<Vec<StreamDistribution>>,
    /// `[test location][stream]`.
    pub test_distributions: Vec<Vec<StreamDistribution>>,
    pub overlap: f64,
    pub seed: u64,
}

impl SyntheticEnvironment {
    pub fn distribution(&self, location_id: &str) -> Option<&[StreamDistribution]> {
        let find = |locs: &[Location]| locs.iter().position(|l| l.id == location_id);
        find(&self.locations)
            .map(|i| self.distributions[i].as_slice())
            .or_else(|| find(&self.test_locations).map(|i| self.test_distributions[i].as_slice()))
    }

    pub fn location(&self, location_id: &str) -> Option<&Location> {
        self.locations
            .iter()
            .chain(&self.test_locations)
            .find(|l| l.id == location_id)
    }
}

/// Streams for `n` (AP, MP) pairs, AP-major: AP1:MP1, AP1:MP2, AP2:MP1, ...
pub fn default_streams(n: usize) -> Vec<StreamId> {
    (0..n)
        .map(|i| {
            StreamId::new(
                format!("AP{}", i / MONITORING_POINTS + 1),
                format!("MP{}", i % MONITORING_POINTS + 1),
            )
        })
        .collect()
}

struct Ripple {
    kx: f64,
    ky: f64,
    phase: f64,
}

impl Ripple {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let wavelength = rng.random_range(8.0..25.0);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let k = std::f64::consts::TAU / wavelength;
        Ripple {
            kx: k * angle.cos(),
            ky: k * angle.sin(),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        (self.kx * x + self.ky * y + self.phase).sin()
    }
}

/// Smooth per-stream fields for the mean and the spread of the RSS.
struct StreamField {
    anchor: (f64, f64),
    log_spread: f64,
    spread_ripple: Ripple,
}

impl StreamField {
    fn random<R: Rng>(rng: &mut R, extent: (f64, f64)) -> Self {
        let margin = 10.0;
        let anchor = (
            rng.random_range(-margin..extent.0 + margin),
            rng.random_range(-margin..extent.1 + margin),
        );
        Self {
            anchor,
            log_spread: rng.random_range(SPREAD_RANGE.0.ln()..SPREAD_RANGE.1.ln()),
            spread_ripple: Ripple::random(rng),
        }
    }

    fn mean_at(&self, x: f64, y: f64) -> f64 {
        let d = (x - self.anchor.0).hypot(y - self.anchor.1).max(1.0);
        MEAN_AT_1M_DBM - MEAN_SLOPE_DB_PER_DECADE * d.log10()
    }

    fn std_at(&self, x: f64, y: f64, overlap: f64) -> f64 {
        let spread = (self.log_spread + SPREAD_VARIATION * self.spread_ripple.at(x, y)).exp();
        SEPARABLE_SIGMA_DBM + overlap * spread
    }
}

/// Build a synthetic environment with default test placement.
pub fn generate_environment(
    grid: GridSpec,
    n_streams: usize,
    overlap: f64,
    seed: u64,
) -> Result<SyntheticEnvironment> {
    generate_environment_with(&EnvironmentParams::new(grid, n_streams, overlap, seed))
}

pub fn generate_environment_with(params: &EnvironmentParams) -> Result<SyntheticEnvironment> {
    let grid = params.grid;
    grid.validate()?;
    if params.n_streams == 0 {
        return Err(Error::InvalidParams(
            "at least one stream is required".into(),
        ));
    }
    if !(params.overlap >= 0.0 && params.overlap.is_finite()) {
        return Err(Error::InvalidParams(
            "overlap must be finite and >= 0".into(),
        ));
    }
    let range = params.rssi_range;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let extent = (
        (grid.cols - 1) as f64 * grid.spacing_m,
        (grid.rows - 1) as f64 * grid.spacing_m,
    );
    let fields: Vec<StreamField> = (0..params.n_streams)
        .map(|_| StreamField::random(&mut rng, extent))
        .collect();
    // keep means inside the range with room for the spread
    let lo = f64::from(range.min) + 1.0;
    let hi = (f64::from(range.max) - 1.0).max(lo);
    let distribution_at = |x: f64, y: f64| -> Vec<StreamDistribution> {
        fields
            .iter()
            .map(|f| StreamDistribution {
                mean_dbm: f.mean_at(x, y).clamp(lo, hi),
                std_dbm: f.std_at(x, y, params.overlap),
            })
            .collect()
    };

    let locations: Vec<Location> = (0..grid.count)
        .map(|i| {
            let (x, y) = grid.position(i);
            Location::new(format!("c{i:02}"), x, y)
        })
        .collect();
    let mut distributions: Vec<Vec<StreamDistribution>> = locations
        .iter()
        .map(|l| distribution_at(l.x, l.y))
        .collect();

    if params.overlap == 0.0 {
        // integer means, distinct per location, so 1 dB is 6 sigma
        let mut means: Vec<Vec<i32>> = distributions
            .iter()
            .map(|row| row.iter().map(|d| d.mean_dbm.round() as i32).collect())
            .collect();
        separate_means(&mut means, &mut rng, range);
        for (row, ints) in distributions.iter_mut().zip(&means) {
            for (d, &m) in row.iter_mut().zip(ints) {
                d.mean_dbm = f64::from(m);
            }
        }
    }

    let positions = test_positions(params, &locations, &mut rng)?;
    let mut test_locations = Vec::with_capacity(positions.len());
    let mut test_distributions = Vec::with_capacity(positions.len());
    for (t, position) in positions.into_iter().enumerate() {
        let (x, y, dist) = match position {
            TestPosition::Calibration(i) => {
                (locations[i].x, locations[i].y, distributions[i].clone())
            }
            TestPosition::Free(x, y) => (x, y, distribution_at(x, y)),
        };
        test_locations.push(Location::new(format!("t{t:02}"), x, y));
        test_distributions.push(dist);
    }

    Ok(SyntheticEnvironment {
        locations,
        test_locations,
        streams: default_streams(params.n_streams),
        rssi_range: range,
        distributions,
        test_distributions,
        overlap: params.overlap,
        seed: params.seed,
    })
}

/// Nudge duplicated mean vectors until every calibration location has a
/// distinct integer mean vector.
fn separate_means<R: Rng>(means: &mut [Vec<i32>], rng: &mut R, range: RssiRange) {
    loop {
        let mut seen = HashSet::new();
        let mut clash = None;
        for (i, row) in means.iter().enumerate() {
            if !seen.insert(row.clone()) {
                clash = Some(i);
                break;
            }
        }
        let Some(i) = clash else { return };
        let s = rng.random_range(0..means[i].len());
        let step = if rng.random_bool(0.5) { 1 } else { -1 };
        let v = means[i][s] + step;
        means[i][s] = if range.contains(v) {
            v
        } else {
            means[i][s] - step
        };
    }
}

enum TestPosition {
    Calibration(usize),
    Free(f64, f64),
}

fn test_positions<R: Rng>(
    params: &EnvironmentParams,
    locations: &[Location],
    rng: &mut R,
) -> Result<Vec<TestPosition>> {
    let grid = params.grid;
    let pick = |mut candidates: Vec<usize>, rng: &mut R| -> Result<Vec<usize>> {
        if params.test_count > candidates.len() {
            return Err(Error::InvalidGrid(format!(
                "{} test locations requested, grid offers {}",
                params.test_count,
                candidates.len()
            )));
        }
        candidates.shuffle(rng);
        candidates.truncate(params.test_count);
        candidates.sort_unstable();
        Ok(candidates)
    };
    Ok(match params.test_placement {
        TestPlacement::OnGrid => pick((0..grid.count).collect(), rng)?
            .into_iter()
            .map(TestPosition::Calibration)
            .collect(),
        TestPlacement::Midpoints => {
            let mut pairs = Vec::new();
            for i in 0..grid.count {
                let (c, r) = grid.cell(i);
                if c + 1 < grid.cols && i + 1 < grid.count {
                    pairs.push((i, i + 1));
                }
                if r + 1 < grid.rows && i + grid.cols < grid.count {
                    pairs.push((i, i + grid.cols));
                }
            }
            pick((0..pairs.len()).collect(), rng)?
                .into_iter()
                .map(|p| {
                    let (a, b) = (&locations[pairs[p].0], &locations[pairs[p].1]);
                    TestPosition::Free((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
                })
                .collect()
        }
        TestPlacement::Scattered => {
            let (x1, y1) = locations
                .iter()
                .fold((0.0f64, 0.0f64), |(x, y), l| (x.max(l.x), y.max(l.y)));
            (0..params.test_count)
                .map(|_| {
                    // redraw points that fall outside the (possibly ragged) grid
                    loop {
                        let x = rng.random_range(0.0..=x1);
                        let y = rng.random_range(0.0..=y1);
                        let col = (x / grid.spacing_m).round() as usize;
                        let row = (y / grid.spacing_m).round() as usize;
                        if row * grid.cols + col.min(grid.cols - 1) < grid.count {
                            break TestPosition::Free(x, y);
                        }
                    }
                })
                .collect()
        }
    })
}

/// Samples per stream for a recording of `duration_s` at `rate_hz`.
pub fn samples_per_stream(duration_s: f64, rate_hz: f64) -> usize {
    (duration_s * rate_hz - 1e-9).ceil() as usize
}

/// Draw a trace at `location_id`: one independent sample per stream every
/// `1 / rate_hz` seconds.
pub fn sample_trace(
    env: &SyntheticEnvironment,
    location_id: &str,
    duration_s: f64,
    rate_hz: f64,
    seed: u64,
) -> Result<Vec<RssiSample>> {
    if !(duration_s > 0.0 && rate_hz > 0.0 && duration_s.is_finite() && rate_hz.is_finite()) {
        return Err(Error::InvalidParams(
            "duration and rate must be positive".into(),
        ));
    }
    let dists = env
        .distribution(location_id)
        .ok_or_else(|| Error::UnknownLocation(location_id.to_string()))?;
    let n = samples_per_stream(duration_s, rate_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals: Vec<Option<Normal<f64>>> = dists
        .iter()
        .map(|d| {
            (d.std_dbm > 0.0).then(|| Normal::new(d.mean_dbm, d.std_dbm).expect("finite sigma"))
        })
        .collect();

    let mut samples = Vec::with_capacity(n * dists.len());
    for t in 0..n {
        let timestamp = t as f64 / rate_hz;
        for ((stream, dist), normal) in env.streams.iter().zip(dists).zip(&normals) {
            let raw = match normal {
                Some(normal) => normal.sample(&mut rng),
                None => dist.mean_dbm,
            };
            samples.push(RssiSample {
                stream: stream.clone(),
                value: env.rssi_range.clamp(raw.round() as i32),
                timestamp,
            });
        }
    }
    Ok(samples)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for the `index`-th item of a kind of trace.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    mix(base ^ mix(tag.wrapping_mul(0x1_0000_0001) ^ index))
}

const TRAINING_TAG: u64 = 1;
const TEST_TAG: u64 = 2;

/// One training trace per calibration location.
pub fn training_traces(
    env: &SyntheticEnvironment,
    duration_s: f64,
    rate_hz: f64,
) -> Result<Vec<TrainingTrace>> {
    env.locations
        .iter()
        .enumerate()
        .map(|(i, loc)| {
            let seed = derive_seed(env.seed, TRAINING_TAG, i as u64);
            Ok(TrainingTrace {
                location: loc.clone(),
                samples: sample_trace(env, &loc.id, duration_s, rate_hz, seed)?,
            })
        })
        .collect()
}

/// One test trace per test location, recorded independently of training.
pub fn test_traces(
    env: &SyntheticEnvironment,
    duration_s: f64,
    rate_hz: f64,
) -> Result<Vec<TestTrace>> {
    env.test_locations
        .iter()
        .enumerate()
        .map(|(i, loc)| {
            let seed = derive_seed(env.seed, TEST_TAG, i as u64);
            Ok(TestTrace {
                id: loc.id.clone(),
                ground_truth: loc.clone(),
                samples: sample_trace(env, &loc.id, duration_s, rate_hz, seed)?,
            })
        })
        .collect()
}
