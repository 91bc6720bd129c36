//! Bidirectional flow table with gap-free per-window volumetric series.

mod key;
mod window;

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::capture::{Direction, PacketRecord, Proto};
use crate::classify::FlowRole;
use crate::Timestamp;

pub use key::{canonical_key, CidrError, ClientNets, FlowKey, Orientation};
pub use window::VolumetricStats;

/// Payload sizes kept per direction for handshake signatures.
pub const FIRST_PAYLOADS: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct FlowTableConfig {
    pub window_us: i64,
    /// Closed windows retained per flow.
    pub max_windows: usize,
    pub capacity: usize,
}

impl Default for FlowTableConfig {
    fn default() -> Self {
        FlowTableConfig { window_us: 1_000_000, max_windows: 600, capacity: 1 << 20 }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("no closed window ends at {0}")]
    NoSuchWindow(Timestamp),
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub key: FlowKey,
    pub first_ts: Timestamp,
    pub last_ts: Timestamp,
    pub first_payload_sizes_up: Vec<u32>,
    pub first_payload_sizes_down: Vec<u32>,
    pub sni: Option<String>,
    pub role: FlowRole,
    pub total_pkts: u64,
    window_us: i64,
    max_windows: usize,
    first_window: i64,
    current_index: i64,
    current: VolumetricStats,
    windows: VecDeque<VolumetricStats>,
    retired_pkts: u64,
}

impl FlowState {
    fn new(key: FlowKey, ts: Timestamp, cfg: &FlowTableConfig) -> Self {
        let idx = ts.as_micros().div_euclid(cfg.window_us);
        FlowState {
            key,
            first_ts: ts,
            last_ts: ts,
            first_payload_sizes_up: Vec::with_capacity(FIRST_PAYLOADS),
            first_payload_sizes_down: Vec::with_capacity(FIRST_PAYLOADS),
            sni: None,
            role: FlowRole::Unclassified,
            total_pkts: 0,
            window_us: cfg.window_us,
            max_windows: cfg.max_windows,
            first_window: idx,
            current_index: idx,
            current: VolumetricStats::empty(Timestamp::from_micros(idx * cfg.window_us), cfg.window_us),
            windows: VecDeque::new(),
            retired_pkts: 0,
        }
    }

    fn record(&mut self, pkt: &PacketRecord, dir: Direction) {
        let idx = pkt.ts.as_micros().div_euclid(self.window_us);
        if idx > self.current_index {
            let next = VolumetricStats::empty(Timestamp::from_micros(idx * self.window_us), self.window_us);
            let closed = std::mem::replace(&mut self.current, next);
            self.push_closed(closed);
            let gap = (idx - self.current_index - 1) as usize;
            let start = self.current_index + 1 + gap.saturating_sub(self.max_windows) as i64;
            if gap > self.max_windows {
                // The whole ring would roll over on zero windows.
                self.retired_pkts += self.windows.iter().map(VolumetricStats::pkt_count).sum::<u64>();
                self.windows.clear();
            }
            for w in start..idx {
                self.push_closed(VolumetricStats::empty(Timestamp::from_micros(w * self.window_us), self.window_us));
            }
            self.current_index = idx;
        }
        // Late packets fold into the open window.
        self.current.add(dir, pkt.payload_len);
        self.total_pkts += 1;
        if pkt.ts > self.last_ts {
            self.last_ts = pkt.ts;
        }

        let handshake = pkt.tcp.is_some_and(|t| t.flags.is_syn());
        if pkt.payload_len > 0 && !handshake && !pkt.is_fragment {
            let sizes = match dir {
                Direction::Upstream => &mut self.first_payload_sizes_up,
                Direction::Downstream => &mut self.first_payload_sizes_down,
            };
            if sizes.len() < FIRST_PAYLOADS {
                sizes.push(pkt.payload_len);
            }
        }
        if self.sni.is_none() && dir == Direction::Upstream {
            if let Some(name) = &pkt.server_name {
                self.sni = Some(name.clone());
            }
        }
    }

    fn push_closed(&mut self, w: VolumetricStats) {
        self.windows.push_back(w);
        if self.windows.len() > self.max_windows {
            if let Some(old) = self.windows.pop_front() {
                self.retired_pkts += old.pkt_count();
            }
        }
    }

    pub fn proto(&self) -> Proto {
        self.key.proto
    }

    pub fn window_us(&self) -> i64 {
        self.window_us
    }

    fn window_index_of_end(&self, window_end: Timestamp) -> Option<i64> {
        let us = window_end.as_micros();
        (us.rem_euclid(self.window_us) == 0).then(|| us / self.window_us - 1)
    }

    /// The closed window ending at `window_end`; `now` decides whether it
    /// has fully elapsed. Windows after the last packet are zero.
    pub fn window_stats(&self, window_end: Timestamp, now: Timestamp) -> Result<VolumetricStats, FlowError> {
        let missing = FlowError::NoSuchWindow(window_end);
        let idx = self.window_index_of_end(window_end).ok_or(missing.clone())?;
        if window_end > now || idx < self.first_window {
            return Err(missing);
        }
        if idx == self.current_index {
            return Ok(self.current);
        }
        if idx > self.current_index {
            return Ok(VolumetricStats::empty(Timestamp::from_micros(idx * self.window_us), self.window_us));
        }
        let back = (self.current_index - idx) as usize;
        if back > self.windows.len() {
            return Err(missing);
        }
        Ok(self.windows[self.windows.len() - back])
    }

    /// Retained closed windows in order, including the open one once `now`
    /// has passed its end.
    pub fn closed_windows(&self, now: Timestamp) -> Vec<VolumetricStats> {
        let mut out: Vec<VolumetricStats> = self.windows.iter().copied().collect();
        if self.current.window_end() <= now {
            out.push(self.current);
        }
        out
    }

    /// The flow's first `n` windows, once all of them have closed.
    pub fn first_windows(&self, n: usize, now: Timestamp) -> Option<Vec<VolumetricStats>> {
        (0..n as i64)
            .map(|i| self.window_stats(Timestamp::from_micros((self.first_window + i + 1) * self.window_us), now).ok())
            .collect()
    }

    /// Packets in windows that rolled out of the ring.
    pub fn retired_pkts(&self) -> u64 {
        self.retired_pkts
    }

    pub fn current_window(&self) -> &VolumetricStats {
        &self.current
    }

    /// Closed windows still held, oldest first (excludes the open window).
    pub fn retained_windows(&self) -> impl Iterator<Item = &VolumetricStats> {
        self.windows.iter()
    }
}

/// Result of feeding one packet.
#[derive(Debug)]
pub struct FlowUpdate {
    pub key: FlowKey,
    pub direction: Direction,
    pub created: bool,
    /// Flow evicted to make room when the table was at capacity.
    pub evicted: Option<FlowState>,
}

/// Single-writer flow table.
pub struct FlowTable {
    nets: ClientNets,
    cfg: FlowTableConfig,
    flows: HashMap<FlowKey, FlowState>,
    ambiguous_orientations: u64,
    evictions: u64,
}

impl FlowTable {
    pub fn new(nets: ClientNets, cfg: FlowTableConfig) -> Self {
        FlowTable { nets, cfg, flows: HashMap::new(), ambiguous_orientations: 0, evictions: 0 }
    }

    pub fn config(&self) -> &FlowTableConfig {
        &self.cfg
    }

    pub fn client_nets(&self) -> &ClientNets {
        &self.nets
    }

    pub fn update(&mut self, pkt: &PacketRecord) -> FlowUpdate {
        let o = self.nets.orient(&pkt.five_tuple);
        if o.ambiguous {
            self.ambiguous_orientations += 1;
        }
        let mut evicted = None;
        let created = !self.flows.contains_key(&o.key);
        if created {
            if self.flows.len() >= self.cfg.capacity {
                evicted = self.evict_oldest_idle();
            }
            self.flows.insert(o.key, FlowState::new(o.key, pkt.ts, &self.cfg));
        }
        let flow = self.flows.get_mut(&o.key).expect("flow present");
        flow.record(pkt, o.direction);
        FlowUpdate { key: o.key, direction: o.direction, created, evicted }
    }

    fn evict_oldest_idle(&mut self) -> Option<FlowState> {
        let victim = self.flows.values().min_by_key(|f| (f.last_ts, f.key)).map(|f| f.key)?;
        self.evictions += 1;
        self.flows.remove(&victim)
    }

    pub fn get(&self, key: &FlowKey) -> Option<&FlowState> {
        self.flows.get(key)
    }

    pub fn get_mut(&mut self, key: &FlowKey) -> Option<&mut FlowState> {
        self.flows.get_mut(key)
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn flows(&self) -> impl Iterator<Item = &FlowState> {
        self.flows.values()
    }

    /// Removes flows idle for longer than `idle_timeout_us`, oldest first.
    pub fn expire_idle(&mut self, now: Timestamp, idle_timeout_us: i64) -> Vec<FlowState> {
        let mut stale: Vec<(Timestamp, FlowKey)> = self
            .flows
            .values()
            .filter(|f| now - f.last_ts > idle_timeout_us)
            .map(|f| (f.last_ts, f.key))
            .collect();
        stale.sort();
        stale.into_iter().filter_map(|(_, k)| self.flows.remove(&k)).collect()
    }

    /// Empties the table, oldest flow first.
    pub fn drain(&mut self) -> Vec<FlowState> {
        let mut all: Vec<FlowState> = self.flows.drain().map(|(_, f)| f).collect();
        all.sort_by_key(|f| (f.last_ts, f.key));
        all
    }

    pub fn ambiguous_orientations(&self) -> u64 {
        self.ambiguous_orientations
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{FiveTuple, TcpFlags, TcpMeta};

    const CLIENT: &str = "192.0.2.10";
    const SERVER: &str = "203.0.113.7";

    fn udp(ts_us: i64, up: bool, len: u32) -> PacketRecord {
        let (c, s) = (CLIENT.parse().unwrap(), SERVER.parse().unwrap());
        let five_tuple = if up {
            FiveTuple { src_ip: c, src_port: 49005, dst_ip: s, dst_port: 48000, proto: Proto::Udp }
        } else {
            FiveTuple { src_ip: s, src_port: 48000, dst_ip: c, dst_port: 49005, proto: Proto::Udp }
        };
        PacketRecord { ts: Timestamp::from_micros(ts_us), five_tuple, payload_len: len, tcp: None, server_name: None, is_fragment: false }
    }

    fn tcp(ts_us: i64, up: bool, len: u32, flags: u8) -> PacketRecord {
        let mut p = udp(ts_us, up, len);
        p.five_tuple.proto = Proto::Tcp;
        if up {
            p.five_tuple.dst_port = 322;
        } else {
            p.five_tuple.src_port = 322;
        }
        p.tcp = Some(TcpMeta { seq: 1, ack: 1, flags: TcpFlags(flags), header_len: 20 });
        p
    }

    fn table() -> FlowTable {
        FlowTable::new("192.0.2.0/24".parse().unwrap(), FlowTableConfig::default())
    }

    const T0: i64 = 1_700_000_000_000_000;

    #[test]
    fn first_packet_creates_flow() {
        let mut t = table();
        let u = t.update(&udp(T0, true, 100));
        assert!(u.created);
        assert_eq!(t.len(), 1);
        assert_eq!(t.get(&u.key).unwrap().total_pkts, 1);
    }

    #[test]
    fn even_spacing_gives_whole_window_rates() {
        let mut t = table();
        let mut key = None;
        for i in 0..600 {
            key = Some(t.update(&udp(T0 + i * 1_000_000 / 300, false, 15)).key);
        }
        let f = t.get(&key.unwrap()).unwrap();
        let now = Timestamp::from_micros(T0 + 2_000_000);
        let ws = f.closed_windows(now);
        assert_eq!(ws.len(), 2);
        for w in ws {
            assert_eq!(w.pps_in(), 300.0);
            assert_eq!(w.pkt_count_in, 300);
        }
    }

    #[test]
    fn video_rate_window() {
        let mut t = table();
        let mut key = None;
        for i in 0..3000 {
            key = Some(t.update(&udp(T0 + i * 333, false, 1416)).key);
        }
        let f = t.get(&key.unwrap()).unwrap();
        let w = f.window_stats(Timestamp::from_micros(T0 + 1_000_000), Timestamp::from_micros(T0 + 1_000_000)).unwrap();
        assert_eq!(w.pps_in(), 3000.0);
        assert!((w.bps_in() - 33.984e6).abs() < 1.0);
    }

    #[test]
    fn window_queries() {
        let mut t = table();
        let k = t.update(&udp(T0 + 100, false, 10)).key;
        t.update(&udp(T0 + 3_500_000, false, 10));
        let f = t.get(&k).unwrap();
        let now = Timestamp::from_micros(T0 + 3_600_000);
        let at = |s: i64| Timestamp::from_micros(T0 + s * 1_000_000);
        assert_eq!(f.window_stats(at(1), now).unwrap().pkt_count_in, 1);
        // Gap windows exist with zero stats.
        assert_eq!(f.window_stats(at(2), now).unwrap(), VolumetricStats::empty(at(1), 1_000_000));
        // The partial current window and the future are not available.
        assert_eq!(f.window_stats(at(4), now), Err(FlowError::NoSuchWindow(at(4))));
        assert_eq!(f.window_stats(at(0), now), Err(FlowError::NoSuchWindow(at(0))));
        // Once time passes the open window closes.
        assert_eq!(f.window_stats(at(4), at(4)).unwrap().pkt_count_in, 1);
        assert_eq!(f.window_stats(at(9), at(10)).unwrap().pkt_count_in, 0);
    }

    #[test]
    fn payload_sizes_skip_handshake() {
        let mut t = table();
        let k = t.update(&tcp(T0, true, 0, TcpFlags::SYN)).key;
        t.update(&tcp(T0 + 10, false, 0, TcpFlags::SYN | TcpFlags::ACK));
        t.update(&tcp(T0 + 20, true, 0, TcpFlags::ACK));
        t.update(&tcp(T0 + 30, true, 517, TcpFlags::ACK | TcpFlags::PSH));
        for (i, n) in [1460, 1460, 502].into_iter().enumerate() {
            t.update(&tcp(T0 + 40 + i as i64, false, n, TcpFlags::ACK));
        }
        let f = t.get(&k).unwrap();
        assert_eq!(f.first_payload_sizes_up, vec![517]);
        assert_eq!(f.first_payload_sizes_down, vec![1460, 1460, 502]);
        for i in 0..10 {
            t.update(&tcp(T0 + 100 + i, true, 40 + i as u32, TcpFlags::ACK));
        }
        let f = t.get(&k).unwrap();
        assert_eq!(f.first_payload_sizes_up, vec![517, 40, 41, 42]);
    }

    #[test]
    fn idle_expiry_boundary() {
        let mut t = table();
        t.update(&udp(T0, true, 1));
        assert!(t.expire_idle(Timestamp::from_micros(T0 + 59_000_000), 60_000_000).is_empty());
        assert_eq!(t.expire_idle(Timestamp::from_micros(T0 + 61_000_000), 60_000_000).len(), 1);
        assert!(t.is_empty());
    }

    #[test]
    fn capacity_evicts_oldest_idle() {
        let mut t = FlowTable::new("192.0.2.0/24".parse().unwrap(), FlowTableConfig { capacity: 2, ..Default::default() });
        let mut a = udp(T0, true, 1);
        a.five_tuple.src_port = 1;
        let mut b = udp(T0 + 5, true, 1);
        b.five_tuple.src_port = 2;
        let mut c = udp(T0 + 9, true, 1);
        c.five_tuple.src_port = 3;
        let ka = t.update(&a).key;
        t.update(&b);
        a.ts = Timestamp::from_micros(T0 + 7);
        t.update(&a); // a is now the most recent
        let u = t.update(&c);
        assert_eq!(u.evicted.unwrap().key.client_port, 2);
        assert!(t.get(&ka).is_some());
        assert_eq!(t.evictions(), 1);
    }

    #[test]
    fn long_gap_keeps_ring_bounded() {
        let mut t = FlowTable::new("192.0.2.0/24".parse().unwrap(), FlowTableConfig { max_windows: 5, ..Default::default() });
        let k = t.update(&udp(T0, true, 1)).key;
        t.update(&udp(T0 + 1_000_000_000, true, 1));
        let f = t.get(&k).unwrap();
        assert_eq!(f.retained_windows().count(), 5);
        assert_eq!(f.retired_pkts(), 1);
    }
}
