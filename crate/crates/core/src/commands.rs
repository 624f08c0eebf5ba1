//! Subcommands of the `dfploc` binary.
//!
//! Every command writes human-readable output to the writer it is given,
//! starting with a `config:` line that echoes the effective parameters.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, DEFAULT_M};
use crate::eval::{
    evaluate, format_table, sweep_k, sweep_m, sweep_streams, sweep_w, windows, ErrorSummary,
    EstimatorKind, EvalConfig, Localizer, SweepParam, SweepResult, TestTrace, WindowMode,
};
use crate::format::{
    load_radio_map, save_radio_map, trace_files, write_file, write_summary_csv, write_sweep_csv,
    TraceFile,
};
use crate::postprocess::ContinuousConfig;
use crate::radiomap::{build_radio_map, SmoothingConfig, SmoothingMode};
use crate::simulator::{
    generate_environment_with, samples_per_stream, test_traces, training_traces, GridSpec, Preset,
    DEFAULT_CALIBRATION_LOCATIONS, DEFAULT_DURATION_S, DEFAULT_RATE_HZ, DEFAULT_STREAMS,
    DEFAULT_TEST_LOCATIONS,
};
use crate::types::{euclidean_distance, Location, PassiveRadioMap, StreamId};

#[derive(Debug, Parser)]
#[command(
    name = "dfploc",
    version,
    about = "Device-free passive localization from RSS histograms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write training and test traces drawn from a seeded synthetic environment.
    Simulate(SimulateArgs),
    /// Build a radio map from a directory of training traces.
    BuildRadiomap(BuildRadiomapArgs),
    /// Localize every window of a single trace.
    Estimate(EstimateArgs),
    /// Summarize distance errors over a directory of test traces.
    Evaluate(EvaluateArgs),
    /// Evaluate over a grid of one parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "realistic")]
    pub preset: Preset,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of streams.
    #[arg(long, default_value_t = DEFAULT_STREAMS)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_LOCATIONS)]
    pub calibration_locations: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_LOCATIONS)]
    pub test_locations: usize,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    pub rate: f64,
    /// Trace duration in seconds.
    #[arg(long, default_value_t = DEFAULT_DURATION_S)]
    pub duration: f64,
    /// Override the preset's distribution overlap.
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Output directory; traces go to `train/` and `test/` below it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BuildRadiomapArgs {
    /// Directory of training trace files.
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value = "additive")]
    pub smoothing: SmoothingMode,
    /// Smoothing floor probability.
    #[arg(long, default_value_t = SmoothingConfig::default().floor)]
    pub floor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Estimator flags shared by `estimate`, `evaluate` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// Samples per stream per estimate.
    #[arg(long, default_value_t = DEFAULT_M)]
    pub m: usize,
    /// Use the first n streams of the radio map.
    #[arg(long, conflicts_with = "streams")]
    pub n: Option<usize>,
    /// Comma-separated streams to use, e.g. `AP1:MP1,AP2:MP1`.
    #[arg(long, value_delimiter = ',')]
    pub streams: Option<Vec<StreamId>>,
    /// Locations averaged by the spatial step.
    #[arg(long, default_value_t = ContinuousConfig::default().k)]
    pub k: usize,
    /// Estimates averaged by the time step.
    #[arg(long, default_value_t = ContinuousConfig::default().w)]
    pub w: usize,
    #[arg(long, default_value = "block")]
    pub window_mode: WindowMode,
    /// Seed for the random baseline.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub radiomap: PathBuf,
    /// Trace file to localize.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value = "probabilistic")]
    pub estimator: EstimatorKind,
    /// Report discrete estimates without spatial and time averaging.
    #[arg(long)]
    pub discrete: bool,
    #[command(flatten)]
    pub est: EstimatorArgs,
    /// CSV output file; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub radiomap: PathBuf,
    /// Directory of test trace files.
    #[arg(long)]
    pub traces: PathBuf,
    /// Evaluate one estimator; all three are compared if absent.
    #[arg(long)]
    pub estimator: Option<EstimatorKind>,
    #[command(flatten)]
    pub est: EstimatorArgs,
    /// Directory for one `error_m,cdf` CSV per table row.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub radiomap: PathBuf,
    #[arg(long)]
    pub traces: PathBuf,
    /// Parameter to sweep: m, n (alias streams), k or w.
    #[arg(long)]
    pub sweep: SweepParam,
    /// Comma-separated grid; ignored for stream sweeps.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long, default_value = "probabilistic")]
    pub estimator: EstimatorKind,
    #[command(flatten)]
    pub est: EstimatorArgs,
    /// CSV output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const DEFAULT_M_GRID: [usize; 4] = [1, 5, 10, 26];
pub const DEFAULT_K_GRID: [usize; 5] = [1, 2, 3, 4, 5];
pub const DEFAULT_W_GRID: [usize; 5] = [1, 2, 3, 5, 10];

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::BuildRadiomap(a) => cmd_build_radiomap(&a, out),
        Command::Estimate(a) => cmd_estimate(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
    }
}

fn say(out: &mut dyn Write, text: impl Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    if args.calibration_locations == 0 || args.test_locations == 0 {
        return Err(Error::InvalidParams("zero locations requested".into()));
    }
    let defaults = GridSpec::default();
    let mut params = args.preset.params(args.seed);
    params.grid = GridSpec {
        rows: args.calibration_locations.div_ceil(defaults.cols),
        count: args.calibration_locations,
        ..defaults
    };
    params.n_streams = args.n;
    params.test_count = args.test_locations;
    if let Some(overlap) = args.overlap {
        params.overlap = overlap;
    }
    let env = generate_environment_with(&params)?;
    let samples = samples_per_stream(args.duration, args.rate);
    say(
        out,
        format!(
            "config: preset={} seed={} n={} m={} k={} w={} rate_hz={} duration_s={} \
             samples_per_stream={} calibration_locations={} test_locations={} overlap={}",
            args.preset.as_str(),
            args.seed,
            args.n,
            DEFAULT_M,
            ContinuousConfig::default().k,
            ContinuousConfig::default().w,
            args.rate,
            args.duration,
            samples,
            env.locations.len(),
            env.test_locations.len(),
            params.overlap,
        ),
    )?;

    let train_dir = args.out.join("train");
    let test_dir = args.out.join("test");
    create_dir(&train_dir)?;
    create_dir(&test_dir)?;
    for trace in training_traces(&env, args.duration, args.rate)? {
        let file = TraceFile::from_samples(
            &env.streams,
            env.rssi_range,
            &trace.samples,
            Some(&trace.location),
        );
        file.save(&train_dir.join(format!("{}.csv", trace.location.id)))?;
    }
    for trace in test_traces(&env, args.duration, args.rate)? {
        let file = TraceFile::from_samples(
            &env.streams,
            env.rssi_range,
            &trace.samples,
            Some(&trace.ground_truth),
        );
        file.save(&test_dir.join(format!("{}.csv", trace.id)))?;
    }
    say(
        out,
        format!(
            "wrote {} training traces to {} and {} test traces to {}",
            env.locations.len(),
            train_dir.display(),
            env.test_locations.len(),
            test_dir.display()
        ),
    )
}

fn load_trace_dir(dir: &Path) -> Result<Vec<(PathBuf, TraceFile)>> {
    let files = trace_files(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyTraces);
    }
    files
        .into_iter()
        .map(|p| TraceFile::load(&p).map(|t| (p, t)))
        .collect()
}

pub fn cmd_build_radiomap(args: &BuildRadiomapArgs, out: &mut dyn Write) -> Result<()> {
    let files = load_trace_dir(&args.traces)?;
    let (first_path, first) = &files[0];
    let mut traces = Vec::with_capacity(files.len());
    for (path, file) in &files {
        if file.streams != first.streams || file.rssi_range != first.rssi_range {
            return Err(Error::InvalidParams(format!(
                "header differs from {}",
                first_path.display()
            ))
            .in_file(path));
        }
        traces.push(file.to_training_trace().map_err(|e| e.in_file(path))?);
    }
    let smoothing = SmoothingConfig {
        floor: args.floor,
        mode: args.smoothing,
    };
    let map = build_radio_map(&traces, &first.streams, first.rssi_range, smoothing)
        .map_err(|e| e.in_file(&args.traces))?;
    save_radio_map(&map, &args.out)?;
    let counts: Vec<usize> = (0..map.locations().len())
        .flat_map(|l| (0..map.streams().len()).map(move |s| (l, s)))
        .map(|(l, s)| map.histogram_at(l, s).sample_count())
        .collect();
    say(
        out,
        format!(
            "config: smoothing={} floor={} rssi_range={},{}",
            smoothing.mode.as_str(),
            smoothing.floor,
            map.rssi_range().min,
            map.rssi_range().max
        ),
    )?;
    say(
        out,
        format!(
            "radio map: {} locations, {} streams, {}..{} samples per histogram -> {}",
            map.locations().len(),
            map.streams().len(),
            counts.iter().min().copied().unwrap_or(0),
            counts.iter().max().copied().unwrap_or(0),
            args.out.display()
        ),
    )
}

fn active_streams(map: &PassiveRadioMap, args: &EstimatorArgs) -> Result<Vec<StreamId>> {
    let all = map.streams();
    match (&args.n, &args.streams) {
        (Some(n), _) if *n == 0 || *n > all.len() => Err(Error::InvalidConfig(format!(
            "n must be in 1..={}, got {n}",
            all.len()
        ))),
        (Some(n), _) => Ok(all[..*n].to_vec()),
        (None, Some(list)) => Ok(list.clone()),
        (None, None) => Ok(all.to_vec()),
    }
}

fn eval_config(
    map: &PassiveRadioMap,
    estimator: EstimatorKind,
    args: &EstimatorArgs,
    continuous: bool,
) -> Result<EvalConfig> {
    let est = EstimatorConfig::new(map, args.m).with_streams(active_streams(map, args)?);
    est.validate(map)?;
    let mut config = EvalConfig::new(estimator, est);
    config.window_mode = args.window_mode;
    config.seed = args.seed;
    if continuous {
        let cont = ContinuousConfig {
            k: args.k,
            w: args.w,
        };
        cont.validate(map.locations().len())?;
        config = config.continuous(cont);
    }
    Ok(config)
}

fn load_tests(dir: &Path) -> Result<Vec<TestTrace>> {
    load_trace_dir(dir)?
        .into_iter()
        .map(|(path, file)| file.to_test_trace().map_err(|e| e.in_file(&path)))
        .collect()
}

/// Sampling rate and duration implied by the first stream of a trace.
fn recording_shape(trace: &TestTrace) -> Option<(f64, f64, usize)> {
    let stream = &trace.samples.first()?.stream;
    let times: Vec<f64> = trace
        .samples
        .iter()
        .filter(|s| &s.stream == stream)
        .map(|s| s.timestamp)
        .collect();
    if times.len() < 2 {
        return None;
    }
    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let step = steps[steps.len() / 2];
    if step <= 0.0 {
        return None;
    }
    let rate = (1.0 / step * 1e6).round() / 1e6;
    let duration = (times.len() as f64 * step * 1e6).round() / 1e6;
    Some((rate, duration, times.len()))
}

fn echo_eval(
    out: &mut dyn Write,
    estimator: &str,
    config: &EvalConfig,
    args: &EstimatorArgs,
    map: &PassiveRadioMap,
    tests: &[TestTrace],
) -> Result<()> {
    let training = (0..map.locations().len())
        .flat_map(|l| (0..map.streams().len()).map(move |s| (l, s)))
        .map(|(l, s)| map.histogram_at(l, s).sample_count())
        .min()
        .unwrap_or(0);
    let (rate, duration, test_samples) = tests
        .first()
        .and_then(recording_shape)
        .map_or(("?".to_string(), "?".to_string(), 0), |(r, d, n)| {
            (r.to_string(), d.to_string(), n)
        });
    say(
        out,
        format!(
            "config: estimator={estimator} n={} m={} k={} w={} window_mode={} seed={} \
             rate_hz={rate} duration_s={duration} samples_per_stream={training} \
             test_samples_per_stream={test_samples} calibration_locations={} test_locations={}",
            config.est.active_streams.len(),
            config.est.m,
            args.k,
            args.w,
            config.window_mode.as_str(),
            config.seed,
            map.locations().len(),
            tests.len(),
        ),
    )
}

pub fn cmd_estimate(args: &EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let map = load_radio_map(&args.radiomap)?;
    let file = TraceFile::load(&args.trace)?;
    let truth = file.ground_truth().ok();
    let trace = TestTrace {
        id: args.trace.display().to_string(),
        ground_truth: truth.clone().unwrap_or_else(|| Location::new("", 0.0, 0.0)),
        samples: file.samples(),
    };
    let config = eval_config(&map, args.estimator, &args.est, !args.discrete)?;
    echo_eval(
        out,
        args.estimator.as_str(),
        &config,
        &args.est,
        &map,
        std::slice::from_ref(&trace),
    )?;

    let mut localizer = Localizer::new(&map, &config, 0);
    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["window", "x", "y"];
    if truth.is_some() {
        header.push("error_m");
    }
    csv.write_record(&header)?;
    for (t, window) in windows(
        &trace,
        &config.est.active_streams,
        config.est.m,
        config.window_mode,
    )?
    .iter()
    .enumerate()
    {
        let (x, y) = localizer.locate(window)?;
        let mut row = vec![(t + 1).to_string(), x.to_string(), y.to_string()];
        if let Some(g) = &truth {
            row.push(euclidean_distance(&Location::new("", x, y), g).to_string());
        }
        csv.write_record(&row)?;
    }
    let bytes = csv
        .into_inner()
        .map_err(|e| Error::io("<csv>", e.into_error()))?;
    match &args.out {
        Some(path) => fs::write(path, bytes).map_err(|e| Error::io(path, e)),
        None => out.write_all(&bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn row_label(kind: EstimatorKind, continuous: bool) -> String {
    let name = match kind {
        EstimatorKind::Probabilistic => "prob.",
        EstimatorKind::Deterministic => "det.",
        EstimatorKind::Random => "random",
    };
    if continuous {
        format!("{name} cont.")
    } else {
        name.to_string()
    }
}

fn file_label(kind: EstimatorKind, continuous: bool) -> String {
    format!(
        "{}-{}",
        kind.as_str(),
        if continuous { "continuous" } else { "discrete" }
    )
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let map = load_radio_map(&args.radiomap)?;
    let tests = load_tests(&args.traces)?;
    let kinds: Vec<EstimatorKind> = match args.estimator {
        Some(k) => vec![k],
        None => EstimatorKind::ALL.to_vec(),
    };
    let echo = args.estimator.map_or("all", |k| k.as_str());
    let primary = kinds[0];
    echo_eval(
        out,
        echo,
        &eval_config(&map, primary, &args.est, true)?,
        &args.est,
        &map,
        &tests,
    )?;

    let mut discrete = Vec::new();
    for &kind in &kinds {
        let config = eval_config(&map, kind, &args.est, false)?;
        discrete.push((kind, evaluate(&map, &tests, &config)?));
    }
    let continuous = evaluate(&map, &tests, &eval_config(&map, primary, &args.est, true)?)?;

    let rows: Vec<(String, &ErrorSummary)> = discrete
        .iter()
        .map(|(k, s)| (row_label(*k, false), s))
        .collect();
    let table_rows: Vec<(&str, &ErrorSummary)> =
        rows.iter().map(|(l, s)| (l.as_str(), *s)).collect();
    say(out, format_table("Discrete space", &table_rows))?;
    let cont_label = row_label(primary, true);
    let disc_label = row_label(primary, false);
    say(
        out,
        format_table(
            &format!("Continuous space (k={}, w={})", args.est.k, args.est.w),
            &[
                (cont_label.as_str(), &continuous),
                (disc_label.as_str(), &discrete[0].1),
            ],
        ),
    )?;

    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let mut outputs: Vec<(String, &ErrorSummary)> = discrete
            .iter()
            .map(|(k, s)| (file_label(*k, false), s))
            .collect();
        outputs.push((file_label(primary, true), &continuous));
        for (label, summary) in outputs {
            let path = dir.join(format!("{label}.csv"));
            write_file(&path, |buf| write_summary_csv(summary, buf))?;
        }
        say(out, format!("wrote summaries to {}", dir.display()))?;
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let map = load_radio_map(&args.radiomap)?;
    let tests = load_tests(&args.traces)?;
    let continuous = matches!(args.sweep, SweepParam::K | SweepParam::W);
    let config = eval_config(&map, args.estimator, &args.est, continuous)?;
    echo_eval(
        out,
        args.estimator.as_str(),
        &config,
        &args.est,
        &map,
        &tests,
    )?;

    let grid = |default: &[usize]| args.grid.clone().unwrap_or_else(|| default.to_vec());
    let result: SweepResult = match args.sweep {
        SweepParam::M => sweep_m(&map, &tests, &grid(&DEFAULT_M_GRID), &config)?,
        SweepParam::Streams => sweep_streams(&map, &tests, &config)?,
        SweepParam::K => sweep_k(&map, &tests, &grid(&DEFAULT_K_GRID), &config)?,
        SweepParam::W => sweep_w(&map, &tests, &grid(&DEFAULT_W_GRID), &config)?,
    };

    let name = result.parameter.as_str();
    let labels: Vec<String> = result
        .points
        .iter()
        .map(|p| format!("{name}={}", p.value))
        .collect();
    let rows: Vec<(&str, &ErrorSummary)> = labels
        .iter()
        .zip(&result.points)
        .map(|(l, p)| (l.as_str(), &p.summary))
        .collect();
    say(out, format_table(&format!("Sweep over {name}"), &rows))?;
    for p in &result.points {
        if p.skipped > 0 {
            say(
                out,
                format!("{name}={}: skipped {} short traces", p.value, p.skipped),
            )?;
        }
        if let Some(subset) = &p.best_subset {
            let list: Vec<String> = subset.iter().map(ToString::to_string).collect();
            say(
                out,
                format!("{name}={}: best subset {}", p.value, list.join(",")),
            )?;
        }
    }
    if let Some(path) = &args.out {
        write_file(path, |buf| write_sweep_csv(&result, buf))?;
        say(out, format!("wrote {}", path.display()))?;
    }
    Ok(())
}
