//! The per-capture pipeline: packets in, sessions and QoE series out.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::net::IpAddr;

use serde::Serialize;

use crate::capture::{CaptureError, CaptureReader, CaptureStats, Direction, PacketRecord, Proto};
use crate::classify::{classify_flow, is_candidate, ClassifierCriteria, FlowRole, DECISION_WINDOWS};
use crate::detect::{Codebook, DetectorConfig, ServerRegistration, SessionDetector, SessionRecord};
use crate::flow::{ClientNets, FlowKey, FlowTable, FlowTableConfig, FIRST_PAYLOADS};
use crate::qoe::{FpsSample, FrameRateTracker, LatencyTracker, QoeSample, QoeSeries, ResolutionTable};
use crate::Timestamp;

#[derive(Clone, Debug)]
pub struct AnalyzerConfig {
    pub client_nets: ClientNets,
    /// Window length for flow statistics and QoE rows, and the frame-rate
    /// interval.
    pub interval_us: i64,
    pub criteria: ClassifierCriteria,
    pub detector: DetectorConfig,
    pub resolution: ResolutionTable,
    /// Gameplay ends once all its flows have been silent this long.
    pub gameplay_idle_us: i64,
    /// Flows silent this long leave the flow table.
    pub flow_idle_us: i64,
    pub flow_capacity: usize,
    /// Bytes a packet may fall short of the largest seen and still count
    /// as full-size.
    pub fps_size_margin: u32,
    pub session_id_prefix: String,
}

impl AnalyzerConfig {
    pub fn new(client_nets: ClientNets, criteria: ClassifierCriteria) -> Self {
        AnalyzerConfig {
            client_nets,
            interval_us: 1_000_000,
            criteria,
            detector: DetectorConfig::default(),
            resolution: ResolutionTable::default(),
            gameplay_idle_us: 10_000_000,
            flow_idle_us: 120_000_000,
            flow_capacity: 1 << 20,
            fps_size_margin: 1,
            session_id_prefix: String::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AnalysisCounters {
    pub frames: u64,
    pub packets: u64,
    pub skipped: u64,
    pub truncated: u64,
    pub skip_reasons: BTreeMap<String, u64>,
    pub flows: u64,
    pub flow_evictions: u64,
    pub ambiguous_orientations: u64,
    pub names_observed: u64,
    pub names_known: u64,
    pub sessions_detected: u64,
    pub ambiguous_setups: u64,
    pub registrations: u64,
    pub inconsistent_registrations: u64,
    pub signature_matches: u64,
    pub candidate_flows: u64,
    pub classified_flows: u64,
    pub unclassified_flows: u64,
    pub latency_samples: u64,
    pub latency_negative: u64,
    pub latency_expired: u64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct AnalysisReport {
    pub sessions: Vec<SessionRecord>,
    /// Rows of every session, grouped by session in detection order.
    pub qoe: Vec<QoeSample>,
    pub counters: AnalysisCounters,
}

impl AnalysisReport {
    /// Concatenates reports of separate captures.
    pub fn merge(reports: Vec<AnalysisReport>) -> AnalysisReport {
        let mut out = AnalysisReport::default();
        for r in reports {
            out.sessions.extend(r.sessions);
            out.qoe.extend(r.qoe);
            let (a, b) = (&mut out.counters, r.counters);
            a.frames += b.frames;
            a.packets += b.packets;
            a.skipped += b.skipped;
            a.truncated += b.truncated;
            for (k, v) in b.skip_reasons {
                *a.skip_reasons.entry(k).or_default() += v;
            }
            a.flows += b.flows;
            a.flow_evictions += b.flow_evictions;
            a.ambiguous_orientations += b.ambiguous_orientations;
            a.names_observed += b.names_observed;
            a.names_known += b.names_known;
            a.sessions_detected += b.sessions_detected;
            a.ambiguous_setups += b.ambiguous_setups;
            a.registrations += b.registrations;
            a.inconsistent_registrations += b.inconsistent_registrations;
            a.signature_matches += b.signature_matches;
            a.candidate_flows += b.candidate_flows;
            a.classified_flows += b.classified_flows;
            a.unclassified_flows += b.unclassified_flows;
            a.latency_samples += b.latency_samples;
            a.latency_negative += b.latency_negative;
            a.latency_expired += b.latency_expired;
            a.warnings.extend(b.warnings);
        }
        out
    }

    pub fn session(&self, id: &str) -> Option<&SessionRecord> {
        self.sessions.iter().find(|s| s.session_id == id)
    }

    pub fn qoe_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a QoeSample> + 'a {
        self.qoe.iter().filter(move |q| q.session_id == id)
    }
}

/// A UDP flow of the current gameplay awaiting or holding its role.
struct Candidate {
    role: Option<FlowRole>,
    /// Downstream packets held until the role is known.
    held: Vec<(Timestamp, u32)>,
    fps: Option<FrameRateTracker>,
}

struct Gameplay {
    reg: ServerRegistration,
    candidates: BTreeMap<FlowKey, Candidate>,
    latency: Option<LatencyTracker>,
    last_activity: Timestamp,
}

/// Streaming analyzer over one capture.
pub struct Analyzer {
    cfg: AnalyzerConfig,
    flows: FlowTable,
    detector: SessionDetector,
    gameplays: BTreeMap<IpAddr, Gameplay>,
    series: BTreeMap<String, QoeSeries>,
    signature_done: BTreeSet<FlowKey>,
    rejected: BTreeSet<FlowKey>,
    now: Option<Timestamp>,
    last_sweep: i64,
    counters: AnalysisCounters,
    fps_buf: Vec<FpsSample>,
}

impl Analyzer {
    pub fn new(codebook: Codebook, cfg: AnalyzerConfig) -> Self {
        let flow_cfg = FlowTableConfig { window_us: cfg.interval_us, capacity: cfg.flow_capacity, ..Default::default() };
        let detector = SessionDetector::new(codebook, cfg.detector).with_id_prefix(cfg.session_id_prefix.clone());
        Analyzer {
            flows: FlowTable::new(cfg.client_nets.clone(), flow_cfg),
            detector,
            cfg,
            gameplays: BTreeMap::new(),
            series: BTreeMap::new(),
            signature_done: BTreeSet::new(),
            rejected: BTreeSet::new(),
            now: None,
            last_sweep: i64::MIN,
            counters: AnalysisCounters::default(),
            fps_buf: Vec::new(),
        }
    }

    pub fn detector(&self) -> &SessionDetector {
        &self.detector
    }

    pub fn flow_table(&self) -> &FlowTable {
        &self.flows
    }

    /// Runs a whole capture. Read errors after the header end the stream
    /// and are returned.
    pub fn run<R: Read>(mut self, mut reader: CaptureReader<R>) -> Result<AnalysisReport, CaptureError> {
        while let Some(pkt) = reader.next_record()? {
            self.feed(&pkt);
        }
        Ok(self.finish(reader.stats()))
    }

    pub fn feed(&mut self, pkt: &PacketRecord) {
        let ts = pkt.ts;
        let now = self.now.map_or(ts, |n| n.max(ts));
        self.now = Some(now);
        let window = now.as_micros().div_euclid(self.cfg.interval_us);
        if window > self.last_sweep {
            self.last_sweep = window;
            self.sweep(now);
        }

        let up = self.flows.update(pkt);
        if up.created {
            self.counters.flows += 1;
        }
        if let Some(ev) = up.evicted {
            self.rejected.remove(&ev.key);
            self.signature_done.remove(&ev.key);
        }
        let key = up.key;
        let dir = up.direction;

        if let (Some(name), Direction::Upstream) = (&pkt.server_name, dir) {
            self.detector.observe_service_name(&key, name, ts);
            self.detector.evaluate_codebook(key.client_ip);
            if let Some(reg) = self.detector.register_gameplay_server(name, &key, ts) {
                self.start_gameplay(reg);
            }
        }

        match key.proto {
            Proto::Tcp => self.check_signature(&key),
            Proto::Udp if up.created => {
                if let Some(reg) = self.detector.register_udp_server(&key, ts) {
                    self.start_gameplay(reg);
                }
            }
            Proto::Udp => {}
        }

        self.track_gameplay(pkt, &key, dir, now);
    }

    fn check_signature(&mut self, key: &FlowKey) {
        if self.signature_done.contains(key) {
            return;
        }
        let Some(flow) = self.flows.get(key) else { return };
        let hit = self.detector.codebook().platforms.iter().find_map(|pb| {
            pb.match_setup_signature(&flow.first_payload_sizes_up, &flow.first_payload_sizes_down, key.server_port)
                .map(|(os, class)| (pb.platform_id, os, class))
        });
        let full = flow.first_payload_sizes_down.len() >= FIRST_PAYLOADS && flow.first_payload_sizes_up.len() >= FIRST_PAYLOADS;
        let Some((platform, os, class)) = hit else {
            if full {
                self.signature_done.insert(*key);
            }
            return;
        };
        self.signature_done.insert(*key);
        self.counters.signature_matches += 1;
        let named = flow.sni.is_some();
        let first_ts = flow.first_ts;
        if let Some(reg) = self.detector.note_signature(key, platform, os, class, first_ts, named) {
            self.start_gameplay(reg);
        }
    }

    fn start_gameplay(&mut self, reg: ServerRegistration) {
        let client = reg.client_ip;
        let last_activity = reg.registered_at;
        let mut gp = Gameplay {
            latency: reg.mgmt_flow.map(|_| LatencyTracker::new()),
            reg,
            candidates: BTreeMap::new(),
            last_activity,
        };
        // Flows that began just before the registration.
        let mut early: Vec<FlowKey> = self
            .flows
            .flows()
            .filter(|f| f.key.client_ip == client && is_candidate(f, &gp.reg, &self.cfg.criteria))
            .map(|f| f.key)
            .collect();
        early.sort();
        for k in early {
            self.rejected.remove(&k);
            gp.candidates.insert(k, Candidate { role: None, held: Vec::new(), fps: None });
            self.counters.candidate_flows += 1;
        }
        self.series.entry(gp.reg.session_id.clone()).or_insert_with(|| QoeSeries::new(self.cfg.interval_us));
        if let Some(old) = self.gameplays.insert(client, gp) {
            self.retire(old);
        }
    }

    fn track_gameplay(&mut self, pkt: &PacketRecord, key: &FlowKey, dir: Direction, now: Timestamp) {
        let Some(gp) = self.gameplays.get_mut(&key.client_ip) else { return };
        let ts = pkt.ts;
        if gp.reg.mgmt_flow == Some(*key) {
            gp.last_activity = gp.last_activity.max(ts);
            self.detector.touch(&key.client_ip, ts);
            if let Some(s) = gp.latency.as_mut().and_then(|l| l.track(pkt, dir)) {
                if let Some(series) = self.series.get_mut(&gp.reg.session_id) {
                    series.add_latency(&s);
                }
            }
            return;
        }
        if key.proto != Proto::Udp || key.server_ip != gp.reg.server_ip || self.rejected.contains(key) {
            return;
        }
        if !gp.candidates.contains_key(key) {
            let Some(flow) = self.flows.get(key) else { return };
            if !is_candidate(flow, &gp.reg, &self.cfg.criteria) {
                self.rejected.insert(*key);
                return;
            }
            gp.candidates.insert(*key, Candidate { role: None, held: Vec::new(), fps: None });
            self.counters.candidate_flows += 1;
        }
        gp.last_activity = gp.last_activity.max(ts);
        self.detector.touch(&key.client_ip, ts);
        let cand = gp.candidates.get_mut(key).expect("candidate present");
        if dir == Direction::Downstream {
            match cand.role {
                None => cand.held.push((ts, pkt.payload_len)),
                Some(r) if r.carries_video() => {
                    let series = self.series.get_mut(&gp.reg.session_id).expect("series exists");
                    feed_video(cand, series, ts, pkt.payload_len, self.cfg.fps_size_margin, &mut self.fps_buf);
                }
                Some(_) => {}
            }
        }
        if cand.role.is_none() {
            let decided = self.flows.get(key).and_then(|f| f.first_windows(DECISION_WINDOWS, now)).is_some();
            if decided {
                self.decide(key.client_ip, *key, now);
            }
        }
    }

    /// Fixes the role of a candidate whose decision windows have closed.
    fn decide(&mut self, client: IpAddr, key: FlowKey, now: Timestamp) {
        let Some(gp) = self.gameplays.get_mut(&client) else { return };
        let role = match self.flows.get(&key) {
            Some(f) => classify_flow(f, &gp.reg, &self.cfg.criteria, now),
            None => FlowRole::Unclassified,
        };
        if let Some(f) = self.flows.get_mut(&key) {
            f.role = role;
        }
        let cand = gp.candidates.get_mut(&key).expect("candidate present");
        cand.role = Some(role);
        let held = std::mem::take(&mut cand.held);
        if role == FlowRole::Unclassified {
            self.counters.unclassified_flows += 1;
            return;
        }
        self.counters.classified_flows += 1;
        if role.carries_video() {
            let series = self.series.get_mut(&gp.reg.session_id).expect("series exists");
            for (ts, len) in held {
                feed_video(cand, series, ts, len, self.cfg.fps_size_margin, &mut self.fps_buf);
            }
        }
        if let Some(s) = self.detector.session_mut(&client) {
            s.set_role(key, role);
        }
    }

    /// Decides pending candidates, ends idle gameplays and expires state.
    fn sweep(&mut self, now: Timestamp) {
        let mut due = Vec::new();
        for (client, gp) in &self.gameplays {
            for (k, c) in &gp.candidates {
                if c.role.is_none() && self.flows.get(k).and_then(|f| f.first_windows(DECISION_WINDOWS, now)).is_some() {
                    due.push((*client, *k));
                }
            }
        }
        for (client, k) in due {
            self.decide(client, k, now);
        }
        let idle: Vec<IpAddr> = self
            .gameplays
            .iter()
            .filter(|(_, gp)| now - gp.last_activity > self.cfg.gameplay_idle_us)
            .map(|(c, _)| *c)
            .collect();
        for client in idle {
            let gp = self.gameplays.remove(&client).expect("gameplay present");
            self.retire(gp);
            self.detector.end_gameplay(&client);
        }
        self.detector.expire(now);
        for f in self.flows.expire_idle(now, self.cfg.flow_idle_us) {
            self.rejected.remove(&f.key);
            self.signature_done.remove(&f.key);
        }
    }

    fn retire(&mut self, gp: Gameplay) {
        if let Some(l) = gp.latency {
            self.counters.latency_samples += l.samples();
            self.counters.latency_negative += l.negative_deltas();
            self.counters.latency_expired += l.expired();
        }
    }

    pub fn finish(mut self, stats: &CaptureStats) -> AnalysisReport {
        if let Some(now) = self.now {
            // Decide what is left as if the capture ran on in silence.
            let end = now + (DECISION_WINDOWS as i64 + 1) * self.cfg.interval_us;
            let mut due = Vec::new();
            for (client, gp) in &self.gameplays {
                for (k, c) in &gp.candidates {
                    if c.role.is_none() {
                        due.push((*client, *k));
                    }
                }
            }
            for (client, k) in due {
                self.decide(client, k, end);
            }
        }
        for gp in std::mem::take(&mut self.gameplays).into_values() {
            self.retire(gp);
        }
        let sessions = self.detector.finish();
        let mut qoe = Vec::new();
        for s in &sessions {
            if let Some(series) = self.series.get(&s.session_id) {
                qoe.extend(series.samples(&s.session_id, &self.cfg.resolution));
            }
        }
        let d = self.detector.counters();
        let c = &mut self.counters;
        c.frames = stats.frames;
        c.packets = stats.records;
        c.skipped = stats.skipped;
        c.truncated = stats.truncated;
        c.skip_reasons = stats.skip_reasons.iter().map(|(k, v)| (format!("{k:?}"), *v)).collect();
        c.flow_evictions = self.flows.evictions();
        c.ambiguous_orientations = self.flows.ambiguous_orientations();
        c.names_observed = d.names_observed;
        c.names_known = d.names_known;
        c.sessions_detected = d.sessions_detected;
        c.ambiguous_setups = d.ambiguous_setups;
        c.registrations = d.registrations;
        c.inconsistent_registrations = d.inconsistent_registrations;
        if stats.truncated > 0 {
            c.warnings.push("capture ends in a truncated record".into());
        }
        if c.flow_evictions > 0 {
            c.warnings.push(format!("{} flows evicted at table capacity", c.flow_evictions));
        }
        if c.inconsistent_registrations > 0 {
            c.warnings.push(format!("{} gameplay names disagree with their flow's server", c.inconsistent_registrations));
        }
        for s in &sessions {
            if s.gameplays > 0 && !s.gameplay_flows.iter().any(|(_, r)| *r != FlowRole::GameplayMgmt) {
                c.warnings.push(format!("session {} has no classified media flow", s.session_id));
            }
        }
        AnalysisReport { sessions, qoe, counters: self.counters }
    }
}

fn feed_video(cand: &mut Candidate, series: &mut QoeSeries, ts: Timestamp, len: u32, margin: u32, buf: &mut Vec<FpsSample>) {
    series.add_video_bytes(ts, len as u64);
    let tracker = cand.fps.get_or_insert_with(|| FrameRateTracker::new(series.window_us(), margin));
    buf.clear();
    tracker.track(len, ts, buf);
    for s in buf.iter() {
        series.add_fps(s);
    }
}
