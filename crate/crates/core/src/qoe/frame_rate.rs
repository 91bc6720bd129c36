use serde::Serialize;

use crate::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FpsSample {
    pub interval_start: Timestamp,
    pub interval_us: i64,
    pub frames: u64,
    pub fps: f64,
}

/// Frame counter over downstream video payload sizes.
///
/// Full-size packets arm a flag; the first clearly smaller packet after
/// them closes a frame. The largest payload seen so far is the full size.
#[derive(Clone, Debug)]
pub struct FrameRateTracker {
    frame_count: u64,
    t_start: Option<Timestamp>,
    size_max: u32,
    flag_max: bool,
    interval_us: i64,
    size_margin: u32,
}

impl Default for FrameRateTracker {
    fn default() -> Self {
        Self::new(1_000_000, 1)
    }
}

impl FrameRateTracker {
    pub fn new(interval_us: i64, size_margin: u32) -> Self {
        assert!(interval_us > 0, "measurement interval must be positive");
        FrameRateTracker { frame_count: 0, t_start: None, size_max: 0, flag_max: false, interval_us, size_margin }
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn size_max(&self) -> u32 {
        self.size_max
    }

    pub fn flag_max(&self) -> bool {
        self.flag_max
    }

    pub fn interval_start(&self) -> Option<Timestamp> {
        self.t_start
    }

    /// Feeds one downstream packet; every interval that elapsed before it
    /// is pushed to `out`, empty ones as zero.
    pub fn track(&mut self, payload_len: u32, ts: Timestamp, out: &mut Vec<FpsSample>) {
        let t_start = match self.t_start {
            Some(t) => t,
            None => {
                self.size_max = payload_len;
                *self.t_start.insert(ts)
            }
        };
        let mut t = t_start;
        while ts > t + self.interval_us {
            out.push(FpsSample {
                interval_start: t,
                interval_us: self.interval_us,
                frames: self.frame_count,
                fps: self.frame_count as f64 * 1e6 / self.interval_us as f64,
            });
            self.frame_count = 0;
            t = t + self.interval_us;
        }
        self.t_start = Some(t);

        if payload_len > self.size_max {
            self.size_max = payload_len;
            return;
        }
        if (payload_len as i64) < self.size_max as i64 - self.size_margin as i64 {
            if self.flag_max {
                self.frame_count += 1;
                self.flag_max = false;
            }
            return;
        }
        self.flag_max = true;
    }
}
