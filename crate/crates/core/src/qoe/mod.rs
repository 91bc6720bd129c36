//! Latency, frame-rate and resolution series of gameplay sessions.

mod frame_rate;
mod latency;
mod resolution;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::Timestamp;

pub use frame_rate::{FpsSample, FrameRateTracker};
pub use latency::{LatencySample, LatencyTracker, PENDING_TTL_US};
pub use resolution::{fps_band, FpsBand, Resolution, ResolutionRow, ResolutionTable};

/// Seconds at the start of a video stream flagged as warm-up.
pub const WARMUP_S: f64 = 2.0;
/// Trailing windows whose maximum bitrate is the peak.
pub const PEAK_WINDOWS: i64 = 10;

/// One row of a session's QoE series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoeSample {
    pub ts: Timestamp,
    pub session_id: String,
    pub latency_ms: Option<f64>,
    pub fps: Option<f64>,
    pub fps_band: Option<FpsBand>,
    pub bitrate_mbps: f64,
    pub resolution: Resolution,
    pub warmup: bool,
}

#[derive(Clone, Debug, Default)]
struct WindowAcc {
    latency_sum: f64,
    latency_n: u32,
    fps_sum: f64,
    fps_n: u32,
    video_bytes: u64,
}

/// Per-window accumulation of a session's measurements.
#[derive(Clone, Debug)]
pub struct QoeSeries {
    window_us: i64,
    windows: BTreeMap<i64, WindowAcc>,
    video_start: Option<i64>,
}

impl QoeSeries {
    pub fn new(window_us: i64) -> Self {
        QoeSeries { window_us, windows: BTreeMap::new(), video_start: None }
    }

    fn index(&self, ts: Timestamp) -> i64 {
        ts.as_micros().div_euclid(self.window_us)
    }

    pub fn add_latency(&mut self, s: &LatencySample) {
        let w = self.windows.entry(self.index(s.ts)).or_default();
        w.latency_sum += s.rtt_ms;
        w.latency_n += 1;
    }

    /// Places an interval at the window holding its midpoint.
    pub fn add_fps(&mut self, s: &FpsSample) {
        let mid = s.interval_start + s.interval_us / 2;
        let w = self.windows.entry(self.index(mid)).or_default();
        w.fps_sum += s.fps;
        w.fps_n += 1;
    }

    pub fn add_video_bytes(&mut self, ts: Timestamp, bytes: u64) {
        let idx = self.index(ts);
        self.video_start = Some(self.video_start.map_or(idx, |v| v.min(idx)));
        self.windows.entry(idx).or_default().video_bytes += bytes;
    }

    pub fn window_us(&self) -> i64 {
        self.window_us
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// One sample per window from the first to the last with data.
    pub fn samples(&self, session_id: &str, table: &ResolutionTable) -> Vec<QoeSample> {
        let (Some((&first, _)), Some((&last, _))) = (self.windows.first_key_value(), self.windows.last_key_value()) else {
            return Vec::new();
        };
        let secs = self.window_us as f64 / 1e6;
        let warmup_windows = (WARMUP_S / secs).ceil() as i64;
        let empty = WindowAcc::default();
        let mut rates: BTreeMap<i64, f64> = BTreeMap::new();
        let mut out = Vec::with_capacity((last - first + 1) as usize);
        for idx in first..=last {
            let w = self.windows.get(&idx).unwrap_or(&empty);
            let bitrate = w.video_bytes as f64 * 8.0 / secs / 1e6;
            rates.insert(idx, bitrate);
            let peak = rates.range(idx - PEAK_WINDOWS + 1..=idx).map(|(_, r)| *r).fold(0.0, f64::max);
            let fps = (w.fps_n > 0).then(|| w.fps_sum / w.fps_n as f64);
            let resolution = match fps {
                Some(f) if bitrate >= table.floor_mbps => table.infer(f, peak),
                _ => Resolution::Unknown,
            };
            out.push(QoeSample {
                ts: Timestamp::from_micros(idx * self.window_us),
                session_id: session_id.to_string(),
                latency_ms: (w.latency_n > 0).then(|| w.latency_sum / w.latency_n as f64),
                fps,
                fps_band: fps.map(fps_band),
                bitrate_mbps: bitrate,
                resolution,
                warmup: self.video_start.is_some_and(|v| idx >= v && idx < v + warmup_windows),
            });
        }
        out
    }
}
