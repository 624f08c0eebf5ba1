//! Text file formats: trace files, radio-map files and result CSVs.
//!
//! Trace file (`dfploc-trace v1`): a `#` header block, then CSV records.
//!
//! ```text
//! # dfploc-trace v1
//! # rssi_range = -100,0
//! # frame = planar meters, arbitrary origin
//! # stream = AP1,MP1
//! # stream = AP1,MP2
//! timestamp_s,ap,mp,rssi_dbm,ground_truth_id,gt_x,gt_y
//! 0,AP1,MP1,-54,c00,0,0
//! 0,AP1,MP2,-61,c00,0,0
//! ```
//!
//! The ground-truth columns may be empty. Records are sorted by timestamp
//! and every (ap, mp) pair must be declared in the header.
//!
//! Radio-map file (`dfploc-radiomap v1`): `key = value` lines. Each
//! `histogram` line is followed by a `bins` line listing every dBm value in
//! the range with its probability, written in shortest round-trip form so a
//! reload reproduces the probabilities bit for bit.
//!
//! ```text
//! # dfploc-radiomap v1
//! rssi_range = -100,0
//! smoothing = additive,0.001
//! stream = AP1,MP1
//! location = c00,0,0
//! histogram = c00,AP1,MP1,300,-54.21
//! bins = -100:0.0009708737864077671 -99:0.0009708737864077671 ...
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ErrorSummary, SweepResult, TestTrace};
use crate::radiomap::{SmoothingConfig, TrainingTrace};
use crate::types::{Location, PassiveRadioMap, RssiHistogram, RssiRange, RssiSample, StreamId};

pub const TRACE_MAGIC: &str = "dfploc-trace";
pub const RADIOMAP_MAGIC: &str = "dfploc-radiomap";
pub const FORMAT_VERSION: &str = "v1";
pub const FRAME_NOTE: &str = "planar meters, arbitrary origin";

/// Labels end up inside comma-, colon- and space-separated fields.
pub fn check_label(label: &str) -> Result<()> {
    let bad = |c: char| matches!(c, ',' | ':' | ';' | '=' | '#') || c.is_whitespace();
    if label.is_empty() || label.chars().any(bad) {
        return Err(Error::InvalidLabel(label.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestamp_s: f64,
    pub ap: String,
    pub mp: String,
    pub rssi_dbm: i32,
    pub ground_truth_id: Option<String>,
    pub gt_x: Option<f64>,
    pub gt_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub streams: Vec<StreamId>,
    pub rssi_range: RssiRange,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn from_samples(
        streams: &[StreamId],
        rssi_range: RssiRange,
        samples: &[RssiSample],
        ground_truth: Option<&Location>,
    ) -> Self {
        let records = samples
            .iter()
            .map(|s| TraceRecord {
                timestamp_s: s.timestamp,
                ap: s.stream.ap.clone(),
                mp: s.stream.mp.clone(),
                rssi_dbm: s.value,
                ground_truth_id: ground_truth.map(|g| g.id.clone()),
                gt_x: ground_truth.map(|g| g.x),
                gt_y: ground_truth.map(|g| g.y),
            })
            .collect();
        Self {
            streams: streams.to_vec(),
            rssi_range,
            records,
        }
    }

    pub fn samples(&self) -> Vec<RssiSample> {
        self.records
            .iter()
            .map(|r| RssiSample {
                stream: StreamId::new(r.ap.clone(), r.mp.clone()),
                value: r.rssi_dbm,
                timestamp: r.timestamp_s,
            })
            .collect()
    }

    /// The single ground-truth location carried by every record.
    pub fn ground_truth(&self) -> Result<Location> {
        let first = self
            .records
            .first()
            .ok_or_else(|| Error::InvalidParams("trace has no records".into()))?;
        let truth = match (&first.ground_truth_id, first.gt_x, first.gt_y) {
            (Some(id), Some(x), Some(y)) => Location::new(id.clone(), x, y),
            _ => {
                return Err(Error::InvalidParams(
                    "trace records carry no ground truth".into(),
                ))
            }
        };
        for r in &self.records {
            if r.ground_truth_id.as_deref() != Some(truth.id.as_str())
                || r.gt_x != Some(truth.x)
                || r.gt_y != Some(truth.y)
            {
                return Err(Error::InvalidParams(format!(
                    "record at t={} has ground truth differing from `{}`",
                    r.timestamp_s, truth.id
                )));
            }
        }
        Ok(truth)
    }

    pub fn to_training_trace(&self) -> Result<TrainingTrace> {
        Ok(TrainingTrace {
            location: self.ground_truth()?,
            samples: self.samples(),
        })
    }

    pub fn to_test_trace(&self) -> Result<TestTrace> {
        let truth = self.ground_truth()?;
        Ok(TestTrace {
            id: truth.id.clone(),
            ground_truth: truth,
            samples: self.samples(),
        })
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut header = format!("# {TRACE_MAGIC} {FORMAT_VERSION}\n");
        writeln!(
            header,
            "# rssi_range = {},{}",
            self.rssi_range.min, self.rssi_range.max
        )
        .unwrap();
        writeln!(header, "# frame = {FRAME_NOTE}").unwrap();
        for s in &self.streams {
            check_label(&s.ap)?;
            check_label(&s.mp)?;
            writeln!(header, "# stream = {},{}", s.ap, s.mp).unwrap();
        }
        let mut out = out;
        out.write_all(header.as_bytes())
            .map_err(|e| Error::io("<trace>", e))?;
        let mut writer = csv::Writer::from_writer(out);
        for r in &self.records {
            if let Some(id) = &r.ground_truth_id {
                check_label(id)?;
            }
            writer.serialize(r)?;
        }
        writer.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, first)) => {
                let tag = first.trim_start_matches('#').trim();
                match tag.split_once(' ') {
                    Some((TRACE_MAGIC, FORMAT_VERSION)) => {}
                    Some((TRACE_MAGIC, version)) => {
                        return Err(Error::UnsupportedVersion {
                            path: path.into(),
                            version: version.to_string(),
                        })
                    }
                    _ => {
                        return Err(Error::parse(
                            path,
                            1,
                            format!("expected `# {TRACE_MAGIC} {FORMAT_VERSION}`"),
                        ))
                    }
                }
            }
            None => return Err(Error::parse(path, 1, "empty trace file")),
        }

        let mut streams = Vec::new();
        let mut range = None;
        let mut body_start = text.lines().count();
        while let Some(&(i, line)) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else {
                body_start = i;
                break;
            };
            lines.next();
            let Some((key, value)) = rest.split_once('=') else {
                continue;
            };
            match key.trim() {
                "rssi_range" => range = Some(parse_range(value, path, i + 1)?),
                "stream" => streams.push(parse_stream(value, path, i + 1)?),
                _ => {}
            }
        }
        let rssi_range = range.ok_or_else(|| Error::parse(path, 1, "missing rssi_range header"))?;
        if streams.is_empty() {
            return Err(Error::parse(path, 1, "no streams declared"));
        }
        crate::types::check_unique_streams(&streams).map_err(|e| e.in_file(path))?;

        let body: String = text
            .lines()
            .skip(body_start)
            .map(|l| format!("{l}\n"))
            .collect();
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let mut records: Vec<TraceRecord> = Vec::new();
        for (n, rec) in reader.deserialize().enumerate() {
            // header row plus 1-based numbering
            let line = body_start + n + 2;
            let rec: TraceRecord = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if !streams.iter().any(|s| s.ap == rec.ap && s.mp == rec.mp) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("stream {}:{} not declared in header", rec.ap, rec.mp),
                ));
            }
            if let Some(prev) = records.last() {
                if rec.timestamp_s < prev.timestamp_s {
                    return Err(Error::parse(
                        path,
                        line,
                        "records are not sorted by timestamp",
                    ));
                }
            }
            records.push(rec);
        }
        Ok(Self {
            streams,
            rssi_range,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

fn parse_range(value: &str, path: &Path, line: usize) -> Result<RssiRange> {
    let parsed = value
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
    let (min, max) =
        parsed.ok_or_else(|| Error::parse(path, line, "rssi_range must be `min,max`"))?;
    RssiRange::new(min, max).map_err(|e| Error::parse(path, line, e.to_string()))
}

fn parse_stream(value: &str, path: &Path, line: usize) -> Result<StreamId> {
    match value.trim().split_once(',') {
        Some((ap, mp)) if !ap.is_empty() && !mp.is_empty() => {
            Ok(StreamId::new(ap.trim(), mp.trim()))
        }
        _ => Err(Error::parse(path, line, "stream must be `ap,mp`")),
    }
}

/// Serialize a radio map to the versioned text format.
pub fn radio_map_to_string(map: &PassiveRadioMap) -> Result<String> {
    let mut out = format!("# {RADIOMAP_MAGIC} {FORMAT_VERSION}\n");
    let range = map.rssi_range();
    let smoothing = map.smoothing();
    writeln!(out, "rssi_range = {},{}", range.min, range.max).unwrap();
    writeln!(
        out,
        "smoothing = {},{}",
        smoothing.mode.as_str(),
        smoothing.floor
    )
    .unwrap();
    for s in map.streams() {
        check_label(&s.ap)?;
        check_label(&s.mp)?;
        writeln!(out, "stream = {},{}", s.ap, s.mp).unwrap();
    }
    for l in map.locations() {
        check_label(&l.id)?;
        writeln!(out, "location = {},{},{}", l.id, l.x, l.y).unwrap();
    }
    for (li, l) in map.locations().iter().enumerate() {
        for (si, s) in map.streams().iter().enumerate() {
            let h = map.histogram_at(li, si);
            writeln!(
                out,
                "histogram = {},{},{},{},{}",
                l.id,
                s.ap,
                s.mp,
                h.sample_count(),
                h.mean_rssi()
            )
            .unwrap();
            out.push_str("bins =");
            for (v, p) in h.bins() {
                write!(out, " {v}:{p}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn save_radio_map(map: &PassiveRadioMap, path: &Path) -> Result<()> {
    fs::write(path, radio_map_to_string(map)?).map_err(|e| Error::io(path, e))
}

pub fn load_radio_map(path: &Path) -> Result<PassiveRadioMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_radio_map(&text, path)
}

/// Parse the radio-map text format; `path` is only used in error messages.
pub fn parse_radio_map(text: &str, path: &Path) -> Result<PassiveRadioMap> {
    let perr = |line: usize, msg: String| Error::parse(path, line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, first) = lines
        .next()
        .ok_or_else(|| perr(1, "empty radio map file".into()))?;
    match first.trim_start_matches('#').trim().split_once(' ') {
        Some((RADIOMAP_MAGIC, FORMAT_VERSION)) => {}
        Some((RADIOMAP_MAGIC, version)) => {
            return Err(Error::UnsupportedVersion {
                path: path.into(),
                version: version.to_string(),
            })
        }
        _ => {
            return Err(perr(
                1,
                format!("expected `# {RADIOMAP_MAGIC} {FORMAT_VERSION}`"),
            ))
        }
    }

    let mut range = None;
    let mut smoothing = None;
    let mut streams: Vec<StreamId> = Vec::new();
    let mut locations: Vec<Location> = Vec::new();
    let mut hists: HashMap<(String, StreamId), RssiHistogram> = HashMap::new();
    let mut pending: Option<(usize, String, StreamId, usize, f64)> = None;

    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| perr(n, "expected `key = value`".into()))?;
        if pending.is_some() && key != "bins" {
            return Err(perr(n, "histogram line must be followed by bins".into()));
        }
        let fields: Vec<&str> = value.split(',').map(str::trim).collect();
        match key {
            "rssi_range" => range = Some(parse_range(value, path, n)?),
            "smoothing" => {
                let [mode, floor] = fields[..] else {
                    return Err(perr(n, "smoothing must be `mode,floor`".into()));
                };
                smoothing = Some(SmoothingConfig {
                    mode: mode.parse().map_err(|e: Error| perr(n, e.to_string()))?,
                    floor: floor
                        .parse()
                        .map_err(|_| perr(n, format!("bad floor `{floor}`")))?,
                });
            }
            "stream" => streams.push(parse_stream(value, path, n)?),
            "location" => {
                let [id, x, y] = fields[..] else {
                    return Err(perr(n, "location must be `id,x,y`".into()));
                };
                let coord = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| perr(n, format!("bad coordinate `{s}`")))
                };
                locations.push(Location::new(id, coord(x)?, coord(y)?));
            }
            "histogram" => {
                let [id, ap, mp, count, mean] = fields[..] else {
                    return Err(perr(
                        n,
                        "histogram must be `location,ap,mp,count,mean`".into(),
                    ));
                };
                pending = Some((
                    n,
                    id.to_string(),
                    StreamId::new(ap, mp),
                    count
                        .parse()
                        .map_err(|_| perr(n, format!("bad sample count `{count}`")))?,
                    mean.parse()
                        .map_err(|_| perr(n, format!("bad mean `{mean}`")))?,
                ));
            }
            "bins" => {
                let (_, id, stream, count, mean) = pending
                    .take()
                    .ok_or_else(|| perr(n, "bins without histogram".into()))?;
                let range =
                    range.ok_or_else(|| perr(n, "rssi_range must precede histograms".into()))?;
                let mut probs = vec![f64::NAN; range.width()];
                for item in value.split_whitespace() {
                    let (v, p) = item
                        .split_once(':')
                        .ok_or_else(|| perr(n, format!("bad bin `{item}`")))?;
                    let v: i32 = v
                        .parse()
                        .map_err(|_| perr(n, format!("bad bin value `{v}`")))?;
                    let p: f64 = p
                        .parse()
                        .map_err(|_| perr(n, format!("bad probability `{p}`")))?;
                    let i = range
                        .index(v)
                        .ok_or_else(|| perr(n, format!("bin {v} outside rssi_range")))?;
                    probs[i] = p;
                }
                if probs.iter().any(|p| p.is_nan()) {
                    return Err(perr(n, "bin list does not cover the rssi range".into()));
                }
                let h = RssiHistogram::from_parts(range, probs, count, mean)
                    .map_err(|e| perr(n, e.to_string()))?;
                if hists.insert((id.clone(), stream.clone()), h).is_some() {
                    return Err(perr(n, format!("duplicate histogram for {id} / {stream}")));
                }
            }
            other => return Err(perr(n, format!("unknown key `{other}`"))),
        }
    }
    if let Some((n, ..)) = pending {
        return Err(perr(n, "histogram line must be followed by bins".into()));
    }

    let range = range.ok_or_else(|| perr(1, "missing rssi_range".into()))?;
    let smoothing = smoothing.ok_or_else(|| perr(1, "missing smoothing".into()))?;
    let expected = locations.len() * streams.len();
    if hists.len() != expected {
        return Err(perr(
            1,
            format!(
                "{} histograms for {} location/stream pairs",
                hists.len(),
                expected
            ),
        ));
    }
    let rows = locations
        .iter()
        .map(|l| {
            streams
                .iter()
                .map(|s| {
                    hists
                        .remove(&(l.id.clone(), s.clone()))
                        .ok_or_else(|| perr(1, format!("missing histogram for {} / {s}", l.id)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    PassiveRadioMap::new(locations, streams, rows, range, smoothing).map_err(|e| e.in_file(path))
}

/// CSV with columns `error_m,cdf`.
pub fn write_summary_csv<W: Write>(summary: &ErrorSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["error_m", "cdf"])?;
    for (e, c) in &summary.cdf_points {
        w.write_record([e.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// CSV with columns `param_value,p25,p50,p75,best_subset`; subsets are
/// `ap:mp` pairs joined by `;`.
pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["param_value", "p25", "p50", "p75", "best_subset"])?;
    for p in &sweep.points {
        let subset = p
            .best_subset
            .as_ref()
            .map(|s| {
                s.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default();
        w.write_record([
            p.value.to_string(),
            p.summary.p25.to_string(),
            p.summary.p50.to_string(),
            p.summary.p75.to_string(),
            subset,
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Write `contents` produced by `f` into `path`.
pub fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Every `*.csv` file directly inside `dir`, sorted by name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiomap::{build_radio_map, SmoothingMode};

    fn streams() -> Vec<StreamId> {
        vec![StreamId::new("AP1", "MP1"), StreamId::new("AP1", "MP2")]
    }

    fn samples() -> Vec<RssiSample> {
        (0..4)
            .flat_map(|t| {
                streams()
                    .into_iter()
                    .enumerate()
                    .map(move |(i, s)| RssiSample {
                        stream: s,
                        value: -40 - t - 10 * i as i32,
                        timestamp: t as f64 * 0.2,
                    })
            })
            .collect()
    }

    #[test]
    fn trace_file_round_trip() {
        let truth = Location::new("c01", 6.0, 0.5);
        let file =
            TraceFile::from_samples(&streams(), RssiRange::default(), &samples(), Some(&truth));
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# dfploc-trace v1\n"));
        assert!(text.contains("timestamp_s,ap,mp,rssi_dbm,ground_truth_id,gt_x,gt_y\n"));
        let back = TraceFile::parse(&text, Path::new("t.csv")).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_test_trace().unwrap().ground_truth, truth);
    }

    #[test]
    fn trace_without_ground_truth() {
        let file = TraceFile::from_samples(&streams(), RssiRange::default(), &samples(), None);
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        let back = TraceFile::parse(std::str::from_utf8(&buf).unwrap(), Path::new("t")).unwrap();
        assert_eq!(back.samples(), samples());
        assert!(back.to_training_trace().is_err());
    }

    #[test]
    fn trace_parse_errors() {
        let p = Path::new("x.csv");
        let head = "# dfploc-trace v1\n# rssi_range = -100,0\n# stream = AP1,MP1\ntimestamp_s,ap,mp,rssi_dbm,ground_truth_id,gt_x,gt_y\n";
        let undeclared = format!("{head}0,AP9,MP1,-40,,,\n");
        match TraceFile::parse(&undeclared, p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("AP9"));
            }
            other => panic!("{other:?}"),
        }
        let unsorted = format!("{head}1,AP1,MP1,-40,,,\n0.5,AP1,MP1,-40,,,\n");
        assert!(matches!(
            TraceFile::parse(&unsorted, p),
            Err(Error::Parse { line: 6, .. })
        ));
        assert!(matches!(
            TraceFile::parse("# dfploc-trace v9\n", p),
            Err(Error::UnsupportedVersion { .. })
        ));
        assert!(TraceFile::parse("hello\n", p).is_err());
    }

    #[test]
    fn radio_map_round_trip_is_bit_exact() {
        let trace = TrainingTrace {
            location: Location::new("c00", 0.1, -2.5),
            samples: samples(),
        };
        for mode in [SmoothingMode::Additive, SmoothingMode::FloorAndRenormalize] {
            let smoothing = SmoothingConfig {
                floor: 7.3e-4,
                mode,
            };
            let map = build_radio_map(
                std::slice::from_ref(&trace),
                &streams(),
                RssiRange::default(),
                smoothing,
            )
            .unwrap();
            let text = radio_map_to_string(&map).unwrap();
            let back = parse_radio_map(&text, Path::new("m")).unwrap();
            assert_eq!(back, map);
            for (a, b) in map
                .histogram_at(0, 1)
                .probabilities()
                .iter()
                .zip(back.histogram_at(0, 1).probabilities())
            {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(radio_map_to_string(&back).unwrap(), text);
        }
    }

    #[test]
    fn radio_map_rejects_unknown_version_and_gaps() {
        let p = Path::new("m");
        assert!(matches!(
            parse_radio_map("# dfploc-radiomap v2\n", p),
            Err(Error::UnsupportedVersion { .. })
        ));
        let trace = TrainingTrace {
            location: Location::new("c00", 0.0, 0.0),
            samples: samples(),
        };
        let map = build_radio_map(
            &[trace],
            &streams(),
            RssiRange::default(),
            SmoothingConfig::default(),
        )
        .unwrap();
        let text = radio_map_to_string(&map).unwrap();
        let truncated: String = text
            .lines()
            .take(text.lines().count() - 2)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(parse_radio_map(&truncated, p).is_err());
    }

    #[test]
    fn labels_are_checked() {
        assert!(check_label("AP1").is_ok());
        for bad in ["a,b", "a:b", "a b", "", "x=y"] {
            assert!(check_label(bad).is_err(), "{bad}");
        }
    }
}
