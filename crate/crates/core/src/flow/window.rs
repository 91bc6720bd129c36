use serde::{Deserialize, Serialize};

use crate::capture::Direction;
use crate::Timestamp;

/// Packet and payload-byte counts of one flow over one closed window.
/// "In" is toward the client (downstream), "out" away from it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumetricStats {
    pub window_start: Timestamp,
    pub window_us: i64,
    pub pkt_count_in: u64,
    pub pkt_count_out: u64,
    pub byte_count_in: u64,
    pub byte_count_out: u64,
}

impl VolumetricStats {
    pub fn empty(window_start: Timestamp, window_us: i64) -> Self {
        VolumetricStats { window_start, window_us, ..Default::default() }
    }

    pub fn add(&mut self, dir: Direction, payload_len: u32) {
        match dir {
            Direction::Downstream => {
                self.pkt_count_in += 1;
                self.byte_count_in += payload_len as u64;
            }
            Direction::Upstream => {
                self.pkt_count_out += 1;
                self.byte_count_out += payload_len as u64;
            }
        }
    }

    pub fn window_end(&self) -> Timestamp {
        self.window_start + self.window_us
    }

    fn secs(&self) -> f64 {
        self.window_us as f64 / 1e6
    }

    pub fn pps_in(&self) -> f64 {
        self.pkt_count_in as f64 / self.secs()
    }

    pub fn pps_out(&self) -> f64 {
        self.pkt_count_out as f64 / self.secs()
    }

    /// Payload bits per second toward the client.
    pub fn bps_in(&self) -> f64 {
        self.byte_count_in as f64 * 8.0 / self.secs()
    }

    pub fn bps_out(&self) -> f64 {
        self.byte_count_out as f64 * 8.0 / self.secs()
    }

    pub fn pps_total(&self) -> f64 {
        self.pps_in() + self.pps_out()
    }

    pub fn pkt_count(&self) -> u64 {
        self.pkt_count_in + self.pkt_count_out
    }
}
