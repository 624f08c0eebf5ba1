//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dfploc::estimators::{DEFAULT_M, TIE_TOLERANCE};
use dfploc::eval::{sweep_k, sweep_m, sweep_streams, sweep_w, windows};
use dfploc::format::{parse_radio_map, radio_map_to_string};
use dfploc::postprocess::{ContinuousConfig, EstimateHistory};
use dfploc::simulator::{
    generate_environment_with, test_traces, training_traces, Preset, DEFAULT_DURATION_S,
    DEFAULT_RATE_HZ,
};
use dfploc::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Scenario {
    map: PassiveRadioMap,
    tests: Vec<TestTrace>,
}

fn scenario(preset: Preset, seed: u64) -> Scenario {
    let env = generate_environment_with(&preset.params(seed)).unwrap();
    let train = training_traces(&env, DEFAULT_DURATION_S, DEFAULT_RATE_HZ).unwrap();
    let tests = test_traces(&env, DEFAULT_DURATION_S, DEFAULT_RATE_HZ).unwrap();
    let map = build_radio_map(
        &train,
        &env.streams,
        env.rssi_range,
        SmoothingConfig::default(),
    )
    .unwrap();
    Scenario { map, tests }
}

fn realistic() -> Vec<Scenario> {
    SEEDS
        .iter()
        .map(|&s| scenario(Preset::Realistic, s))
        .collect()
}

fn config(map: &PassiveRadioMap, kind: EstimatorKind, seed: u64) -> EvalConfig {
    let mut c = EvalConfig::new(kind, EstimatorConfig::new(map, DEFAULT_M));
    c.seed = seed;
    c
}

fn p50(s: &Scenario, kind: EstimatorKind, cont: Option<ContinuousConfig>, seed: u64) -> f64 {
    let mut c = config(&s.map, kind, seed);
    c.continuous = cont;
    evaluate(&s.map, &s.tests, &c).unwrap().p50
}

// ---------------------------------------------------------------- criterion 1

/// Smoothed probability of every range value, computed straight from the raw
/// counts.
fn oracle_histogram(values: &[i32], range: RssiRange, smoothing: SmoothingConfig) -> Vec<f64> {
    let counts: Vec<f64> = range
        .values()
        .map(|v| values.iter().filter(|&&x| x == v).count() as f64)
        .collect();
    let n = values.len() as f64;
    let bins = counts.len() as f64;
    match smoothing.mode {
        SmoothingMode::Additive => counts
            .iter()
            .map(|c| (c + smoothing.floor * n) / (n + bins * smoothing.floor * n))
            .collect(),
        SmoothingMode::FloorAndRenormalize => {
            let raised: Vec<f64> = counts
                .iter()
                .map(|c| (c / n).max(smoothing.floor))
                .collect();
            let total: f64 = raised.iter().sum();
            raised.iter().map(|p| p / total).collect()
        }
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dac1e);
    let instances = 1000;
    let mut worst = 0.0f64;
    let mut argmax_mismatch = 0;
    let mut ties = 0;
    for _ in 0..instances {
        let n_loc = rng.random_range(1..=5usize);
        let n_streams = rng.random_range(1..=3usize);
        let m = rng.random_range(1..=3usize);
        let min = rng.random_range(-90..=-40);
        let range = RssiRange::new(min, min + rng.random_range(2..=14)).unwrap();
        let width = range.width() as f64;
        let smoothing = SmoothingConfig {
            floor: rng.random_range(1e-4..0.9 / width),
            mode: if rng.random_bool(0.5) {
                SmoothingMode::Additive
            } else {
                SmoothingMode::FloorAndRenormalize
            },
        };
        let streams: Vec<StreamId> = (0..n_streams)
            .map(|i| StreamId::new(format!("AP{}", i + 1), "MP1"))
            .collect();

        // raw[l][s] = training values
        let mut raw: Vec<Vec<Vec<i32>>> = (0..n_loc)
            .map(|_| {
                (0..n_streams)
                    .map(|_| {
                        let centre = rng.random_range(range.min..=range.max);
                        (0..rng.random_range(1..=30))
                            .map(|_| range.clamp(centre + rng.random_range(-2..=2)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        if n_loc > 1 && rng.random_bool(0.2) {
            // identical twin location: exact tie
            let twin = rng.random_range(1..n_loc);
            raw[twin] = raw[0].clone();
            ties += 1;
        }
        let traces: Vec<TrainingTrace> = raw
            .iter()
            .enumerate()
            .map(|(l, per_stream)| TrainingTrace {
                location: Location::new(format!("L{l}"), l as f64, (l * l) as f64),
                samples: per_stream
                    .iter()
                    .enumerate()
                    .flat_map(|(s, vals)| {
                        let stream = streams[s].clone();
                        vals.iter().enumerate().map(move |(j, &v)| RssiSample {
                            stream: stream.clone(),
                            value: v,
                            timestamp: j as f64,
                        })
                    })
                    .collect(),
            })
            .collect();
        let map = build_radio_map(&traces, &streams, range, smoothing).unwrap();

        let window_values: Vec<Vec<i32>> = (0..n_streams)
            .map(|_| {
                (0..m)
                    .map(|_| rng.random_range(range.min..=range.max))
                    .collect()
            })
            .collect();
        let window = SignalWindow::new(
            streams
                .iter()
                .cloned()
                .zip(window_values.iter().cloned())
                .collect(),
        )
        .unwrap();
        let (estimate, post) =
            discrete_estimate(&map, &window, &EstimatorConfig::new(&map, m)).unwrap();

        // direct products of probabilities, uniform prior
        let products: Vec<f64> = raw
            .iter()
            .map(|per_stream| {
                let mut product = 1.0;
                for (s, vals) in per_stream.iter().enumerate() {
                    let probs = oracle_histogram(vals, range, smoothing);
                    for &v in &window_values[s] {
                        product *= probs[(v - range.min) as usize];
                    }
                }
                product
            })
            .collect();
        let total: f64 = products.iter().sum();
        for (l, &p) in products.iter().enumerate() {
            let oracle = p / total;
            let got = post.probability(&format!("L{l}")).unwrap();
            worst = worst.max(((got - oracle) / oracle).abs());
        }
        // equal products can differ in the last bits; ties use the
        // estimator's documented tolerance and go to the lowest id
        let max = products.iter().copied().fold(0.0, f64::max);
        let best = products
            .iter()
            .position(|&p| p >= max * (-TIE_TOLERANCE).exp())
            .unwrap();
        if estimate.id != format!("L{best}") {
            argmax_mismatch += 1;
        }
    }
    outcome(
        worst <= 1e-9 && argmax_mismatch == 0,
        format!(
            "{instances} instances ({ties} with exact ties), max relative error {worst:.2e}, \
             {argmax_mismatch} argmax mismatches"
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn degeneration_identities() -> Outcome {
    let s = scenario(Preset::Realistic, 1);
    let locations = s.map.locations();
    let est = EstimatorConfig::new(&s.map, DEFAULT_M);
    let mut k1_checked = 0;
    let mut k1_bad = 0;
    let mut w1_bad = 0;
    for trace in &s.tests {
        let mut history = EstimateHistory::new();
        let mut history_k2 = EstimateHistory::new();
        for window in windows(trace, &est.active_streams, est.m, WindowMode::Block).unwrap() {
            let (loc, post) = discrete_estimate(&s.map, &window, &est).unwrap();
            let top1 = spatial_average(&post, locations, 1, 0).unwrap();
            let pipeline = continuous_estimate(
                &s.map,
                &window,
                &est,
                &ContinuousConfig { k: 1, w: 1 },
                &mut history,
            )
            .unwrap();
            k1_checked += 1;
            if (top1.x, top1.y) != (loc.x, loc.y) || (pipeline.x, pipeline.y) != (loc.x, loc.y) {
                k1_bad += 1;
            }
            let top2 = spatial_average(&post, locations, 2, 0).unwrap();
            let smoothed = continuous_estimate(
                &s.map,
                &window,
                &est,
                &ContinuousConfig { k: 2, w: 1 },
                &mut history_k2,
            )
            .unwrap();
            if (smoothed.x, smoothed.y) != (top2.x, top2.y) {
                w1_bad += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for len in 1..50 {
        let points: Vec<EstimatePoint> = (0..len)
            .map(|t| EstimatePoint {
                x: rng.random_range(-1e3..1e3),
                y: rng.random_range(-1e3..1e3),
                t: t + 1,
            })
            .collect();
        if time_average(&points, 1).unwrap() != *points.last().unwrap() {
            w1_bad += 1;
        }
    }

    // per stream, m identical samples are exactly m times one sample
    let mut m_checked = 0;
    let mut m_bad = 0;
    let mut multi_worst = 0.0f64;
    for loc in locations.iter().step_by(4) {
        for stream in s.map.streams() {
            for v in (-100..=0).step_by(7) {
                let one = SignalWindow::new(vec![(stream.clone(), vec![v])]).unwrap();
                let single = log_likelihood(&s.map, &one, loc).unwrap();
                for m in 1..=DEFAULT_M {
                    let many = SignalWindow::new(vec![(stream.clone(), vec![v; m])]).unwrap();
                    m_checked += 1;
                    if log_likelihood(&s.map, &many, loc).unwrap() != m as f64 * single {
                        m_bad += 1;
                    }
                }
            }
        }
        // across all streams the per-stream terms are summed in floating point
        for v in (-100..=0).step_by(7) {
            let vals = |m: usize| -> SignalWindow {
                SignalWindow::new(
                    s.map
                        .streams()
                        .iter()
                        .map(|st| (st.clone(), vec![v; m]))
                        .collect(),
                )
                .unwrap()
            };
            let single = log_likelihood(&s.map, &vals(1), loc).unwrap();
            for m in 1..=DEFAULT_M {
                let many = log_likelihood(&s.map, &vals(m), loc).unwrap();
                multi_worst = multi_worst.max(((many - m as f64 * single) / many).abs());
            }
        }
    }
    outcome(
        k1_bad == 0 && w1_bad == 0 && m_bad == 0,
        format!(
            "k=1 == argmax on {k1_checked} windows ({k1_bad} differ); w=1 identity \
             ({w1_bad} differ); {m_checked} per-stream m-sample checks ({m_bad} differ); \
             all-stream windows within {multi_worst:.1e} relative"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn startup_divisor() -> Outcome {
    let w = 5;
    let xs = [10.0, 20.0, 60.0, 0.0, 30.0, 100.0, 5.0];
    let mut history = EstimateHistory::new();
    let mut bad = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let t = i + 1;
        let avg = history
            .push_and_average(EstimatePoint { x, y: -x, t: 0 }, w)
            .unwrap();
        let divisor = w.min(t);
        let expected: f64 = xs[t - divisor..t].iter().sum::<f64>() / divisor as f64;
        if (avg.x - expected).abs() > 1e-12 || (avg.y + expected).abs() > 1e-12 || avg.t != t {
            bad.push(t);
        }
    }
    outcome(
        bad.is_empty(),
        format!("w=5 over {} estimates, mismatches at t={bad:?}", xs.len()),
    )
}

// ---------------------------------------------------------------- criterion 4

fn separable_recovery() -> Outcome {
    let mut fractions = Vec::new();
    for &seed in &SEEDS {
        let s = scenario(Preset::Separable, seed);
        let summary = evaluate(
            &s.map,
            &s.tests,
            &config(&s.map, EstimatorKind::Probabilistic, seed),
        )
        .unwrap();
        fractions.push(summary.exact_fraction());
    }
    outcome(
        fractions.iter().all(|&f| f >= 0.99),
        format!("exact fraction per seed {}", fmt(&fractions, 4)),
    )
}

// ---------------------------------------------------------------- criterion 5

fn baseline_ordering(scenarios: &[Scenario]) -> Outcome {
    let mut rows = Vec::new();
    let mut ok = 0;
    for (s, &seed) in scenarios.iter().zip(&SEEDS) {
        let prob = p50(s, EstimatorKind::Probabilistic, None, seed);
        let det = p50(s, EstimatorKind::Deterministic, None, seed);
        let rnd = p50(s, EstimatorKind::Random, None, seed);
        if prob < det && det < rnd {
            ok += 1;
        }
        rows.push(format!("{prob:.2}<{det:.2}<{rnd:.2}"));
    }
    outcome(
        ok == SEEDS.len(),
        format!("{ok}/5 seeds; p50 prob<det<random: {}", rows.join(" ")),
    )
}

// ---------------------------------------------------------------- criterion 6

fn continuous_improvement(scenarios: &[Scenario]) -> Outcome {
    let mut rows = Vec::new();
    let mut ok = 0;
    for (s, &seed) in scenarios.iter().zip(&SEEDS) {
        let discrete = p50(s, EstimatorKind::Probabilistic, None, seed);
        let continuous = p50(
            s,
            EstimatorKind::Probabilistic,
            Some(ContinuousConfig { k: 2, w: 5 }),
            seed,
        );
        let gain = 1.0 - continuous / discrete;
        if continuous < discrete && gain >= 0.10 {
            ok += 1;
        }
        rows.push(format!(
            "{discrete:.2}->{continuous:.2} ({:.0}%)",
            gain * 100.0
        ));
    }
    outcome(
        ok == SEEDS.len(),
        format!("{ok}/5 seeds; p50 discrete->continuous: {}", rows.join(" ")),
    )
}

// ---------------------------------------------------------------- criterion 7

fn trends(scenarios: &[Scenario]) -> Outcome {
    let mut failures = Vec::new();
    for (s, &seed) in scenarios.iter().zip(&SEEDS) {
        let base = config(&s.map, EstimatorKind::Probabilistic, seed);
        let m = sweep_m(&s.map, &s.tests, &[1, 5, 10, 26], &base)
            .unwrap()
            .p50s();
        if !m.windows(2).all(|w| w[1] <= w[0] * 1.05) {
            failures.push(format!("seed {seed} m {}", fmt(&m, 2)));
        }
        let n = sweep_streams(&s.map, &s.tests, &base).unwrap().p50s();
        if !n.windows(2).all(|w| w[1] <= w[0]) {
            failures.push(format!("seed {seed} n {}", fmt(&n, 3)));
        }
        // each averaging step on its own: w swept at k=1, k swept at w=1
        let w = sweep_w(
            &s.map,
            &s.tests,
            &[1, 5],
            &base.clone().continuous(ContinuousConfig { k: 1, w: 1 }),
        )
        .unwrap()
        .p50s();
        if w[1] >= w[0] {
            failures.push(format!("seed {seed} w {}", fmt(&w, 2)));
        }
        let k = sweep_k(
            &s.map,
            &s.tests,
            &[1, 2],
            &base.clone().continuous(ContinuousConfig { k: 1, w: 1 }),
        )
        .unwrap()
        .p50s();
        if k[1] > k[0] {
            failures.push(format!("seed {seed} k {}", fmt(&k, 2)));
        }
    }
    let detail = if failures.is_empty() {
        "m, n, w and k trends hold on 5/5 seeds".to_string()
    } else {
        format!("violations: {}", failures.join("; "))
    };
    outcome(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- criterion 8

fn radio_map_invariants() -> Outcome {
    let mut problems = Vec::new();
    let mut maps = 0;
    for mode in [SmoothingMode::Additive, SmoothingMode::FloorAndRenormalize] {
        for &seed in &SEEDS {
            let env = generate_environment_with(&Preset::Realistic.params(seed)).unwrap();
            let train = training_traces(&env, DEFAULT_DURATION_S, DEFAULT_RATE_HZ).unwrap();
            let smoothing = SmoothingConfig { floor: 1e-3, mode };
            let map = build_radio_map(&train, &env.streams, env.rssi_range, smoothing).unwrap();
            maps += 1;
            let width = map.rssi_range().width();
            if map.histogram_count() != map.locations().len() * map.streams().len()
                || map.locations().len() != env.locations.len()
            {
                problems.push(format!("seed {seed}: incomplete grid"));
            }
            for l in 0..map.locations().len() {
                for s in 0..map.streams().len() {
                    let h = map.histogram_at(l, s);
                    let total: f64 = h.probabilities().iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        problems.push(format!("seed {seed}: sum {total}"));
                    }
                    if h.probabilities().len() != width
                        || h.probabilities().iter().any(|&p| p <= 0.0)
                    {
                        problems.push(format!("seed {seed}: non-positive or missing bin"));
                    }
                }
            }
            let rebuilt = build_radio_map(&train, &env.streams, env.rssi_range, smoothing).unwrap();
            if !bit_identical(&map, &rebuilt) {
                problems.push(format!("seed {seed}: rebuild differs"));
            }
            let text = radio_map_to_string(&map).unwrap();
            let loaded = parse_radio_map(&text, "<memory>".as_ref()).unwrap();
            if !bit_identical(&map, &loaded) || radio_map_to_string(&loaded).unwrap() != text {
                problems.push(format!("seed {seed}: round trip differs"));
            }
        }
    }
    problems.dedup();
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{maps} maps: normalized, positive, complete, bit-identical rebuild and round trip"
            )
        } else {
            problems.join("; ")
        },
    )
}

fn bit_identical(a: &PassiveRadioMap, b: &PassiveRadioMap) -> bool {
    a == b
        && (0..a.locations().len()).all(|l| {
            (0..a.streams().len()).all(|s| {
                let (x, y) = (a.histogram_at(l, s), b.histogram_at(l, s));
                x.probabilities()
                    .iter()
                    .zip(y.probabilities())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
                    && x.mean_rssi().to_bits() == y.mean_rssi().to_bits()
            })
        })
}

// ---------------------------------------------------------------- criterion 9

fn cli_defaults() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let map = dir.path().join("map.txt");
    let run = |args: &[&std::ffi::OsStr]| -> String {
        let out = Command::new(env!("CARGO_BIN_EXE_dfploc"))
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    let os = |s: &'static str| std::ffi::OsStr::new(s);
    let simulate = run(&[os("simulate"), os("--out"), data.as_os_str()]);
    let train = data.join("train");
    let test = data.join("test");
    run(&[
        os("build-radiomap"),
        os("--traces"),
        train.as_os_str(),
        os("--out"),
        map.as_os_str(),
    ]);
    let evaluate = run(&[
        os("evaluate"),
        os("--radiomap"),
        map.as_os_str(),
        os("--traces"),
        test.as_os_str(),
    ]);
    let count = |p: &std::path::Path| std::fs::read_dir(p).unwrap().count();

    let expected = [
        "n=6",
        "m=26",
        "k=2",
        "w=5",
        "rate_hz=5",
        "duration_s=60",
        "samples_per_stream=300",
        "calibration_locations=53",
        "test_locations=32",
    ];
    let echo = |text: &str| -> Vec<String> {
        text.lines()
            .find(|l| l.starts_with("config:"))
            .unwrap_or("")
            .split_whitespace()
            .map(String::from)
            .collect()
    };
    let (sim_echo, eval_echo) = (echo(&simulate), echo(&evaluate));
    let missing: Vec<String> = expected
        .iter()
        .flat_map(|e| {
            let mut m = Vec::new();
            if !sim_echo.iter().any(|t| t == e) {
                m.push(format!("simulate:{e}"));
            }
            if !eval_echo.iter().any(|t| t == e) {
                m.push(format!("evaluate:{e}"));
            }
            m
        })
        .collect();
    let files = (count(&train), count(&test));
    outcome(
        missing.is_empty() && files == (53, 32),
        format!(
            "echo {}; {} training and {} test trace files{}",
            eval_echo.join(" "),
            files.0,
            files.1,
            if missing.is_empty() {
                String::new()
            } else {
                format!("; missing {}", missing.join(","))
            }
        ),
    )
}

// -------------------------------------------------------------------- driver

fn fmt(values: &[f64], digits: usize) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.digits$}")).collect();
    format!("[{}]", parts.join(", "))
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let mut out = match result {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            out.pass = false;
            out.detail.push_str(&format!("; over the {limit:?} limit"));
        }
    }
    out.detail
        .push_str(&format!("; {:.2}s", elapsed.as_secs_f64()));
    out
}

fn main() -> ExitCode {
    let scenarios = realistic();
    let results = [
        (
            "oracle equivalence",
            timed(Some(Duration::from_secs(10)), oracle_equivalence),
        ),
        (
            "degeneration identities",
            timed(None, degeneration_identities),
        ),
        ("time-average startup divisor", timed(None, startup_divisor)),
        (
            "separable exact recovery",
            timed(Some(Duration::from_secs(60)), separable_recovery),
        ),
        (
            "baseline ordering",
            timed(None, || baseline_ordering(&scenarios)),
        ),
        (
            "continuous improvement",
            timed(None, || continuous_improvement(&scenarios)),
        ),
        ("parameter trends", timed(None, || trends(&scenarios))),
        (
            "histogram and radio-map invariants",
            timed(None, radio_map_invariants),
        ),
        ("CLI default configuration", timed(None, cli_defaults)),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {name}: {status} ({})", i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
