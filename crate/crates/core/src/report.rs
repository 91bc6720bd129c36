//! Output files of an analysis and the summaries built from them.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{SessionRecord, SetupType};
use crate::qoe::{fps_band, FpsBand, QoeSample, Resolution, PEAK_WINDOWS, WARMUP_S};
use crate::synth::GroundTruthManifest;

pub const SESSIONS_SCHEMA: &str = "cgl-sessions/1";
pub const QOE_SCHEMA: &str = "cgl-qoe/1";
pub const REPORT_SCHEMA: &str = "cgl-report/1";
pub const QOE_COLUMNS: [&str; 7] = ["ts", "session_id", "latency_ms", "fps", "fps_band", "bitrate_mbps", "resolution"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("schema mismatch: expected {expected}, found `{found}`")]
    Schema { expected: &'static str, found: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Serialize, Deserialize)]
struct SchemaLine {
    schema: String,
}

/// Schema header line, then one session per line.
pub fn write_sessions_jsonl<W: Write>(mut w: W, sessions: &[SessionRecord]) -> io::Result<()> {
    writeln!(w, "{}", serde_json::to_string(&SchemaLine { schema: SESSIONS_SCHEMA.into() })?)?;
    for s in sessions {
        writeln!(w, "{}", serde_json::to_string(s)?)?;
    }
    w.flush()
}

pub fn read_sessions_jsonl<R: BufRead>(r: R) -> Result<Vec<SessionRecord>, ReportError> {
    let mut lines = r.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    match serde_json::from_str::<SchemaLine>(&first) {
        Ok(h) if h.schema == SESSIONS_SCHEMA => {}
        Ok(h) => return Err(ReportError::Schema { expected: SESSIONS_SCHEMA, found: h.schema }),
        Err(_) => return Err(ReportError::Schema { expected: SESSIONS_SCHEMA, found: first }),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReportError::Parse { line: i + 2, msg: e.to_string() })?);
    }
    Ok(out)
}

/// One row of `qoe.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct QoeRow {
    pub ts: f64,
    pub session_id: String,
    pub latency_ms: Option<f64>,
    pub fps: Option<f64>,
    pub fps_band: Option<FpsBand>,
    pub bitrate_mbps: f64,
    pub resolution: Resolution,
}

impl From<&QoeSample> for QoeRow {
    fn from(s: &QoeSample) -> Self {
        QoeRow {
            ts: s.ts.as_secs_f64(),
            session_id: s.session_id.clone(),
            latency_ms: s.latency_ms,
            fps: s.fps,
            fps_band: s.fps_band,
            bitrate_mbps: s.bitrate_mbps,
            resolution: s.resolution,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

/// `# schema:` comment line, column header, then rows.
pub fn write_qoe_csv<W: Write>(mut w: W, rows: &[QoeSample]) -> Result<(), ReportError> {
    writeln!(w, "# schema: {QOE_SCHEMA}")?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(QOE_COLUMNS)?;
    for s in rows {
        c.write_record([
            format!("{:.3}", s.ts.as_secs_f64()),
            s.session_id.clone(),
            opt(s.latency_ms),
            opt(s.fps),
            s.fps_band.map(|b| b.as_str().to_string()).unwrap_or_default(),
            format!("{:.4}", s.bitrate_mbps),
            s.resolution.as_str().to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

pub fn read_qoe_csv<R: BufRead>(mut r: R) -> Result<Vec<QoeRow>, ReportError> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let found = first.trim().strip_prefix("# schema:").map(str::trim).unwrap_or(first.trim());
    if found != QOE_SCHEMA {
        return Err(ReportError::Schema { expected: QOE_SCHEMA, found: found.to_string() });
    }
    let mut c = csv::Reader::from_reader(r);
    let header: Vec<String> = c.headers()?.iter().map(str::to_string).collect();
    if header != QOE_COLUMNS {
        return Err(ReportError::Schema { expected: QOE_SCHEMA, found: header.join(",") });
    }
    let mut out = Vec::new();
    for (i, rec) in c.records().enumerate() {
        let rec = rec?;
        let line = i + 3;
        let bad = |msg: String| ReportError::Parse { line, msg };
        let num = |j: usize| -> Result<Option<f64>, ReportError> {
            let f = rec.get(j).unwrap_or("");
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|_| bad(format!("{} `{f}` is not a number", QOE_COLUMNS[j])))
            }
        };
        let ts = num(0)?.ok_or_else(|| bad("missing ts".into()))?;
        let band = match rec.get(4).unwrap_or("") {
            "" => None,
            b => Some(b.parse().map_err(|_| bad(format!("unknown fps band `{b}`")))?),
        };
        let res = rec.get(6).unwrap_or("");
        out.push(QoeRow {
            ts,
            session_id: rec.get(1).unwrap_or("").to_string(),
            latency_ms: num(2)?,
            fps: num(3)?,
            fps_band: band,
            bitrate_mbps: num(5)?.ok_or_else(|| bad("missing bitrate".into()))?,
            resolution: res.parse().map_err(|_| bad(format!("unknown resolution `{res}`")))?,
        });
    }
    Ok(out)
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyPercentiles {
    pub samples: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl LatencyPercentiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        Some(LatencyPercentiles { samples: v.len(), p50: percentile(&v, 50.0)?, p90: percentile(&v, 90.0)?, p99: percentile(&v, 99.0)? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupSummary {
    pub setup: String,
    pub sessions: usize,
    pub seconds: usize,
    /// Share of seconds with a frame rate in each band.
    pub fps_share: BTreeMap<String, f64>,
    /// Share of seconds in each resolution band.
    pub resolution_share: BTreeMap<String, f64>,
    pub latency: Option<LatencyPercentiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthMetrics {
    pub seconds_compared: usize,
    pub fps_seconds: usize,
    pub mean_abs_fps_error: Option<f64>,
    pub max_abs_fps_error: Option<f64>,
    pub resolution_seconds: usize,
    pub resolution_accuracy: Option<f64>,
    pub latency_samples: usize,
    pub latency_bias_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub setups: Vec<SetupSummary>,
    pub truth: Option<TruthMetrics>,
}

fn shares<K: Ord + Clone>(keys: &[K], items: impl Iterator<Item = K>, name: impl Fn(&K) -> String) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<K, usize> = keys.iter().map(|k| (k.clone(), 0)).collect();
    let mut n = 0usize;
    for k in items {
        *counts.entry(k).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return BTreeMap::new();
    }
    counts.iter().map(|(k, c)| (name(k), *c as f64 / n as f64)).collect()
}

/// Rows inside a session's warm-up: the first seconds after video starts.
pub fn warmup_mask(rows: &[&QoeRow]) -> Vec<bool> {
    let interval = rows.windows(2).map(|w| w[1].ts - w[0].ts).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    let interval = if interval.is_finite() { interval } else { 1.0 };
    let start = rows.iter().find(|r| r.bitrate_mbps > 0.0).map(|r| r.ts);
    rows.iter().map(|r| start.is_some_and(|s| r.ts >= s - 1e-9 && r.ts < s + WARMUP_S.max(interval) - 1e-9)).collect()
}

fn group_by_session(rows: &[QoeRow]) -> BTreeMap<&str, Vec<&QoeRow>> {
    let mut m: BTreeMap<&str, Vec<&QoeRow>> = BTreeMap::new();
    for r in rows {
        m.entry(r.session_id.as_str()).or_default().push(r);
    }
    m
}

/// Per-setup shares and latency percentiles; `sessions` maps rows to
/// setups, rows of unknown sessions fall under `unknown`.
pub fn summarize(rows: &[QoeRow], sessions: &[SessionRecord]) -> Summary {
    let setup_of: BTreeMap<&str, SetupType> = sessions.iter().map(|s| (s.session_id.as_str(), s.setup)).collect();
    let mut by_setup: BTreeMap<String, (usize, Vec<&QoeRow>)> = BTreeMap::new();
    for (sid, rs) in group_by_session(rows) {
        let setup = setup_of.get(sid).copied().unwrap_or(SetupType::Unknown).as_str().to_string();
        let e = by_setup.entry(setup).or_default();
        e.0 += 1;
        e.1.extend(rs);
    }
    let setups = by_setup
        .into_iter()
        .map(|(setup, (n, rs))| {
            let lat: Vec<f64> = rs.iter().filter_map(|r| r.latency_ms).collect();
            SetupSummary {
                setup,
                sessions: n,
                seconds: rs.len(),
                fps_share: shares(&FpsBand::ALL, rs.iter().filter_map(|r| r.fps.map(fps_band)), |b| b.as_str().into()),
                resolution_share: shares(&Resolution::ALL, rs.iter().map(|r| r.resolution), |r| r.as_str().into()),
                latency: LatencyPercentiles::of(&lat),
            }
        })
        .collect();
    Summary { schema: REPORT_SCHEMA.into(), setups, truth: None }
}

/// Session rows belonging to the manifest's client, or all rows when the
/// sessions are not known.
fn rows_for_truth<'a>(rows: &'a [QoeRow], sessions: &[SessionRecord], client: IpAddr) -> Vec<&'a QoeRow> {
    let ids: Vec<&str> = sessions.iter().filter(|s| s.client_ip == client).map(|s| s.session_id.as_str()).collect();
    rows.iter().filter(|r| sessions.is_empty() || ids.contains(&r.session_id.as_str())).collect()
}

/// Error of measured rows against a manifest. Warm-up and the final
/// second, whose frame-rate interval never closes, are skipped; so are,
/// for resolution, the seconds after a band or rate change.
pub fn truth_metrics(rows: &[QoeRow], sessions: &[SessionRecord], m: &GroundTruthManifest) -> TruthMetrics {
    let truth: BTreeMap<i64, usize> = m.seconds.iter().enumerate().map(|(i, s)| (s.ts.floor() as i64, i)).collect();
    let changes: Vec<f64> = m
        .seconds
        .windows(2)
        .filter(|w| w[0].resolution != w[1].resolution || w[0].fps != w[1].fps)
        .map(|w| w[1].ts)
        .collect();
    let mine = rows_for_truth(rows, sessions, m.client_ip);
    let mut fps_err = Vec::new();
    let (mut res_n, mut res_ok, mut compared) = (0usize, 0usize, 0usize);
    for (_, rs) in group_by_session(&mine.iter().map(|r| (*r).clone()).collect::<Vec<_>>()) {
        let warm = warmup_mask(&rs);
        for (r, w) in rs.iter().zip(warm) {
            let Some(&i) = truth.get(&(r.ts.floor() as i64)) else { continue };
            if w || i + 1 == m.seconds.len() {
                continue;
            }
            compared += 1;
            let t = &m.seconds[i];
            if let Some(f) = r.fps {
                fps_err.push((f - t.fps as f64).abs());
            }
            let settling = changes.iter().any(|c| r.ts >= *c && r.ts < c + PEAK_WINDOWS as f64);
            if !settling {
                res_n += 1;
                res_ok += (r.resolution == t.resolution) as usize;
            }
        }
    }
    let lat: Vec<f64> = mine.iter().filter_map(|r| r.latency_ms).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    TruthMetrics {
        seconds_compared: compared,
        fps_seconds: fps_err.len(),
        mean_abs_fps_error: mean(&fps_err),
        max_abs_fps_error: fps_err.iter().copied().reduce(f64::max),
        resolution_seconds: res_n,
        resolution_accuracy: (res_n > 0).then(|| res_ok as f64 / res_n as f64),
        latency_samples: lat.len(),
        latency_bias_ms: mean(&lat).map(|l| l - m.rtt_ms),
    }
}

/// `section,setup,metric,value` lines.
pub fn write_summary_csv<W: Write>(w: W, s: &Summary) -> Result<(), ReportError> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["section", "setup", "metric", "value"])?;
    let num = |v: f64| format!("{v:.6}");
    for st in &s.setups {
        c.write_record(["sessions", &st.setup, "count", &st.sessions.to_string()])?;
        c.write_record(["sessions", &st.setup, "seconds", &st.seconds.to_string()])?;
        for (k, v) in &st.fps_share {
            c.write_record(["fps_share", &st.setup, k, &num(*v)])?;
        }
        for (k, v) in &st.resolution_share {
            c.write_record(["resolution_share", &st.setup, k, &num(*v)])?;
        }
        if let Some(l) = &st.latency {
            for (k, v) in [("p50", l.p50), ("p90", l.p90), ("p99", l.p99)] {
                c.write_record(["latency_ms", &st.setup, k, &num(v)])?;
            }
        }
    }
    if let Some(t) = &s.truth {
        let fields = [
            ("mean_abs_fps_error", t.mean_abs_fps_error),
            ("max_abs_fps_error", t.max_abs_fps_error),
            ("resolution_accuracy", t.resolution_accuracy),
            ("latency_bias_ms", t.latency_bias_ms),
        ];
        for (k, v) in fields {
            c.write_record(["truth", "", k, &v.map(num).unwrap_or_default()])?;
        }
    }
    c.flush()?;
    Ok(())
}
