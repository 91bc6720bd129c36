use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use crate::capture::{Direction, PacketRecord};
use crate::Timestamp;

/// Pending upstream segments older than this are dropped (two heartbeats).
pub const PENDING_TTL_US: i64 = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatencySample {
    /// Arrival of the acknowledging downstream packet.
    pub ts: Timestamp,
    pub rtt_ms: f64,
}

/// Pairs upstream payload segments of a management flow with the
/// downstream packet acknowledging them.
#[derive(Debug, Default)]
pub struct LatencyTracker {
    pending: HashMap<u32, Timestamp>,
    order: VecDeque<(Timestamp, u32)>,
    negative_deltas: u64,
    expired: u64,
    samples: u64,
}

impl LatencyTracker {
    pub fn new() -> Self {
        Self::default()
    }

    fn expire(&mut self, now: Timestamp) {
        while let Some(&(t, ack)) = self.order.front() {
            if now - t <= PENDING_TTL_US {
                break;
            }
            self.order.pop_front();
            if self.pending.get(&ack) == Some(&t) {
                self.pending.remove(&ack);
                self.expired += 1;
            }
        }
    }

    /// Feeds one packet of the management flow.
    pub fn track(&mut self, pkt: &PacketRecord, dir: Direction) -> Option<LatencySample> {
        let tcp = pkt.tcp?;
        self.expire(pkt.ts);
        match dir {
            Direction::Upstream => {
                if pkt.payload_len > 0 && !pkt.is_fragment {
                    let expected = tcp.seq.wrapping_add(pkt.payload_len);
                    // A retransmission keeps the first send time.
                    self.pending.entry(expected).or_insert_with(|| {
                        self.order.push_back((pkt.ts, expected));
                        pkt.ts
                    });
                }
                None
            }
            Direction::Downstream => {
                if !tcp.flags.has(crate::capture::TcpFlags::ACK) {
                    return None;
                }
                let t_up = self.pending.remove(&tcp.ack)?;
                let delta = pkt.ts - t_up;
                if delta < 0 {
                    self.negative_deltas += 1;
                    return None;
                }
                self.samples += 1;
                Some(LatencySample { ts: pkt.ts, rtt_ms: delta as f64 / 1e3 })
            }
        }
    }

    pub fn negative_deltas(&self) -> u64 {
        self.negative_deltas
    }

    pub fn expired(&self) -> u64 {
        self.expired
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}
