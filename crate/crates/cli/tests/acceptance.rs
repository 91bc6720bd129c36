//! End-to-end acceptance checks over generated captures.
//!
//! Each test prints one `[PASS]`/`[FAIL]` line straight to stdout so the
//! verdicts show up without `--nocapture`.

use std::collections::HashMap;
use std::io::{Cursor, Write};
use std::net::IpAddr;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use cgl_core::capture::{Direction, FiveTuple, PacketRecord, Proto, TcpFlags, TcpMeta};
use cgl_core::classify::FlowRole;
use cgl_core::detect::{Codebook, DetectionSource, SetupType};
use cgl_core::flow::{FlowTableConfig, VolumetricStats};
use cgl_core::qoe::{FpsSample, FrameRateTracker};
use cgl_core::qoe::Resolution;
use cgl_core::synth::{gen_session, GroundTruthManifest, ProfileKind, SessionProfile};
use cgl_core::{AnalysisReport, Analyzer, AnalyzerConfig, CaptureReader, ClientNets, FlowTable, LinkType, QoeSample, Timestamp};

const CLIENT_NETS: &str = "192.0.2.0/24";
const GFN: [ProfileKind; 3] = [ProfileKind::GfnDesktop, ProfileKind::GfnMobile, ProfileKind::GfnBrowser];
const XBOX: [ProfileKind; 3] = [ProfileKind::XboxConsole, ProfileKind::XboxPcBrowser, ProfileKind::XboxMobileBrowser];
const RESOLUTIONS: [Resolution; 3] = [Resolution::Fhd, Resolution::Hd, Resolution::Sd];
const RTTS_MS: [f64; 3] = [5.0, 20.0, 80.0];
const CORPUS_SEEDS: u64 = 5;
const CORPUS_DURATION_S: u32 = 20;
const WARMUP_S: usize = 2;
const SETTLE_S: usize = 10;

fn verdict(id: &str, ok: bool, detail: String) {
    let line = format!("[{}] {id}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

struct Run {
    profile: SessionProfile,
    manifest: GroundTruthManifest,
    report: AnalysisReport,
}

fn analyze(profile: &SessionProfile) -> Run {
    let (mut cap, manifest) = gen_session(profile).expect("profile generates");
    let reader = CaptureReader::new(Cursor::new(cap.to_pcap_bytes(LinkType::Ethernet))).expect("pcap header");
    let cb = Codebook::default();
    let cfg = AnalyzerConfig::new(CLIENT_NETS.parse().unwrap(), cb.criteria);
    let report = Analyzer::new(cb, cfg).run(reader).expect("analysis");
    Run { profile: profile.clone(), manifest, report }
}

struct Corpus {
    runs: Vec<Run>,
    elapsed: Duration,
}

/// 3 setups × 2 frame rates × 3 resolutions × 5 seeds, RTT cycling by seed.
fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let t = Instant::now();
        let mut runs = Vec::new();
        for kind in GFN {
            for fps in [30, 60] {
                for res in RESOLUTIONS {
                    for seed in 0..CORPUS_SEEDS {
                        let rtt = RTTS_MS[seed as usize % RTTS_MS.len()];
                        let s = 1000 + runs.len() as u64;
                        let p = SessionProfile::new(kind, fps, res, rtt, CORPUS_DURATION_S, s).unwrap();
                        runs.push(analyze(&p));
                    }
                }
            }
        }
        Corpus { runs, elapsed: t.elapsed() }
    })
}

fn xbox_runs() -> &'static Vec<Run> {
    static X: OnceLock<Vec<Run>> = OnceLock::new();
    X.get_or_init(|| {
        let mut runs = Vec::new();
        for kind in XBOX {
            for fps in [30, 60] {
                for res in RESOLUTIONS {
                    let p = SessionProfile::new(kind, fps, res, 20.0, 10, 5000 + runs.len() as u64).unwrap();
                    runs.push(analyze(&p));
                }
            }
        }
        runs
    })
}

/// QoE rows of a run's only session, keyed by whole epoch second.
fn rows_by_second(run: &Run) -> HashMap<i64, &QoeSample> {
    let Some(s) = run.report.sessions.first() else {
        return HashMap::new();
    };
    run.report
        .qoe
        .iter()
        .filter(|q| q.session_id == s.session_id)
        .map(|q| (q.ts.as_micros().div_euclid(1_000_000), q))
        .collect()
}

/// Indices of the manifest seconds that count as steady: past warm-up,
/// not the closing second, and at least `settle` seconds after any change.
fn steady_seconds(m: &GroundTruthManifest, settle: usize) -> Vec<usize> {
    let n = m.seconds.len();
    let mut last_change = 0usize;
    let mut out = Vec::new();
    for i in 0..n {
        if i > 0 && (m.seconds[i].fps != m.seconds[i - 1].fps || m.seconds[i].resolution != m.seconds[i - 1].resolution) {
            last_change = i;
        }
        let settled = last_change == 0 || i >= last_change + settle;
        if i >= WARMUP_S && i + 1 < n && settled {
            out.push(i);
        }
    }
    out
}

#[test]
fn c1_detection_and_setup_accuracy() {
    let c = corpus();
    let mut detected = 0;
    let mut setup_ok = 0;
    let mut misses = Vec::new();
    for r in &c.runs {
        let s = &r.report.sessions;
        if s.len() == 1 && s[0].platform_id == r.manifest.platform && s[0].detected_by == DetectionSource::Codebook {
            detected += 1;
            if s[0].setup == r.manifest.setup && s[0].setup != SetupType::Unknown {
                setup_ok += 1;
            } else {
                misses.push(format!("{} seed {} -> {}", r.profile.kind, r.profile.seed, s[0].setup));
            }
        } else {
            misses.push(format!("{} seed {}: {} sessions", r.profile.kind, r.profile.seed, s.len()));
        }
    }
    let n = c.runs.len();
    let within = c.elapsed <= Duration::from_secs(300);
    let ok = n == 90 && detected == n && setup_ok == n && within;
    verdict(
        "C1 detection",
        ok,
        format!("{detected}/{n} detected, {setup_ok}/{n} setups, {:.1}s for generation and analysis", c.elapsed.as_secs_f64()),
    );
    assert!(ok, "{misses:?}");
}

#[test]
fn c2_frame_rate_error() {
    let c = corpus();
    let mut worst_mean = 0.0f64;
    let mut worst_interval = 0.0f64;
    let mut missing = 0;
    let mut compared = 0;
    for r in &c.runs {
        let rows = rows_by_second(r);
        let mut errs = Vec::new();
        for i in steady_seconds(&r.manifest, 0) {
            let t = &r.manifest.seconds[i];
            match rows.get(&(t.ts as i64)).and_then(|q| q.fps) {
                Some(f) => errs.push((f - t.fps as f64).abs()),
                None => missing += 1,
            }
        }
        compared += errs.len();
        if !errs.is_empty() {
            worst_mean = worst_mean.max(errs.iter().sum::<f64>() / errs.len() as f64);
            worst_interval = worst_interval.max(errs.iter().cloned().fold(0.0, f64::max));
        }
    }
    let ok = compared > 0 && missing == 0 && worst_mean < 2.0 && worst_interval <= 5.0;
    verdict(
        "C2 frame rate",
        ok,
        format!("{compared} intervals, {missing} missing, worst session mean |err| {worst_mean:.3}, worst interval {worst_interval:.1}"),
    );
    assert!(ok);
}

#[test]
fn c3_resolution_accuracy() {
    let c = corpus();
    let mut total = 0usize;
    let mut hits = 0usize;
    let mut worst: Option<(f64, String)> = None;
    for r in &c.runs {
        let rows = rows_by_second(r);
        let (mut n, mut h) = (0usize, 0usize);
        for i in steady_seconds(&r.manifest, SETTLE_S) {
            let t = &r.manifest.seconds[i];
            n += 1;
            if rows.get(&(t.ts as i64)).is_some_and(|q| q.resolution == t.resolution) {
                h += 1;
            }
        }
        total += n;
        hits += h;
        if n > 0 {
            let acc = h as f64 / n as f64;
            if worst.as_ref().is_none_or(|(w, _)| acc < *w) {
                worst = Some((acc, format!("{} {}fps {} seed {}", r.profile.kind, r.profile.fps_at(0), r.profile.resolution_at(0), r.profile.seed)));
            }
        }
    }
    let acc = hits as f64 / total.max(1) as f64;
    let ok = total > 0 && acc >= 0.95;
    let (wa, wn) = worst.unwrap_or((0.0, String::new()));
    verdict("C3 resolution", ok, format!("{hits}/{total} steady seconds = {:.2}%, worst session {wn} {:.1}%", acc * 100.0, wa * 100.0));
    assert!(ok);
}

#[test]
fn c4_latency() {
    let c = corpus();
    let mut ok = true;
    let mut lines = Vec::new();
    for rtt in RTTS_MS {
        let runs: Vec<&Run> = c.runs.iter().filter(|r| r.profile.rtt_ms == rtt).collect();
        let mut worst_bias = 0.0f64;
        let mut rates = Vec::new();
        for r in &runs {
            let rows = rows_by_second(r);
            let lat: Vec<f64> =
                r.manifest.seconds.iter().filter_map(|t| rows.get(&(t.ts as i64)).and_then(|q| q.latency_ms)).collect();
            let rate = lat.len() as f64 / r.manifest.seconds.len() as f64;
            rates.push(rate);
            if lat.is_empty() {
                ok = false;
                continue;
            }
            let mean = lat.iter().sum::<f64>() / lat.len() as f64;
            worst_bias = worst_bias.max((mean - rtt).abs());
            ok &= (mean - rtt).abs() <= 1.0 && (rate - 0.5).abs() <= 0.1;
        }
        let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().cloned().fold(0.0, f64::max);
        lines.push(format!("{rtt} ms: {} sessions, worst |bias| {worst_bias:.3} ms, rate {lo:.2}..{hi:.2}/s", runs.len()));
        ok &= !runs.is_empty();
    }
    verdict("C4 latency", ok, lines.join("; "));
    assert!(ok);
}

#[test]
fn c5_flow_roles() {
    let mut checked = 0;
    let mut errors = Vec::new();
    let mut split_ok = 0;
    let mut split_total = 0;
    for r in corpus().runs.iter().chain(xbox_runs()) {
        let Some(s) = r.report.sessions.first() else {
            errors.push(format!("{} seed {}: no session", r.profile.kind, r.profile.seed));
            continue;
        };
        for (key, role) in &s.gameplay_flows {
            checked += 1;
            let truth = r.manifest.role_of(key.client_port, key.server_ip, key.server_port, key.proto);
            if truth != Some(*role) {
                errors.push(format!("{} seed {} {key}: {role:?} vs {truth:?}", r.profile.kind, r.profile.seed));
            }
        }
        for t in &r.manifest.flows {
            if !s.gameplay_flows.iter().any(|(k, _)| k.client_port == t.client_port && k.server_port == t.server_port && k.proto == t.proto) {
                errors.push(format!("{} seed {}: {:?} flow missed", r.profile.kind, r.profile.seed, t.role));
            }
        }
        if r.manifest.flows.iter().any(|f| f.role == FlowRole::CombinedMediaInput) {
            split_total += 1;
            let roles: Vec<FlowRole> = s.gameplay_flows.iter().map(|(_, r)| *r).collect();
            if roles.contains(&FlowRole::CombinedMediaInput) && roles.contains(&FlowRole::StunWebrtc) {
                split_ok += 1;
            }
        }
    }
    let ok = errors.is_empty() && checked > 0 && split_total > 0 && split_ok == split_total;
    verdict(
        "C5 flow roles",
        ok,
        format!("{checked} flows checked, {} errors, combined/STUN separated in {split_ok}/{split_total} sessions", errors.len()),
    );
    assert!(ok, "{errors:?}");
}

#[test]
fn c6_stripped_names() {
    let mut total = 0;
    let mut hits = 0;
    let mut misses = Vec::new();
    for kind in GFN {
        for &os in kind.allowed_os() {
            for seed in 0..3u64 {
                let mut p = SessionProfile::new(kind, 30, Resolution::Hd, 20.0, 6, 7000 + seed).unwrap();
                p.os = Some(os);
                p.strip_sni = true;
                let r = analyze(&p);
                let Some(mgmt) = &r.manifest.mgmt else { continue };
                total += 1;
                let s = r.report.sessions.first();
                let good = s.is_some_and(|s| s.os == Some(mgmt.os) && s.setup_class == Some(mgmt.class) && s.setup == r.manifest.setup);
                if good {
                    hits += 1;
                } else {
                    misses.push(format!("{kind} {os:?} seed {seed}: {:?}", s.map(|s| (s.os, s.setup_class, s.setup))));
                }
            }
        }
    }
    let ok = total > 0 && hits == total;
    verdict("C6 stripped SNI", ok, format!("{hits}/{total} management flows identified by handshake sizes"));
    assert!(ok, "{misses:?}");
}

fn packet_stream() -> impl Strategy<Value = Vec<(i64, u32)>> {
    let size = prop_oneof![
        3 => Just(1466u32),
        1 => Just(1465u32),
        2 => 1u32..1500,
        1 => 1400u32..1500,
    ];
    prop::collection::vec((0i64..120_000, size), 1..300)
}

#[test]
fn c7_frame_counter_properties() {
    const CASES: u32 = 10_000;
    let mut runner = TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
    let res = runner.run(&(packet_stream(), 0u32..4), |(pkts, margin)| {
        let mut t = FrameRateTracker::new(1_000_000, margin);
        let mut out = Vec::new();
        let mut ts = 1_000_000_000i64;
        let mut running_max: Option<u32> = None;
        let mut full_since_count = 0u32;
        let mut counted = 0u64;
        let mut fulls = 0u64;
        for &(gap, len) in &pkts {
            ts += gap;
            let before = out.iter().map(|s: &FpsSample| s.frames).sum::<u64>() + t.frame_count();
            let prev_max = t.size_max();
            t.track(len, Timestamp::from_micros(ts), &mut out);
            let after = out.iter().map(|s| s.frames).sum::<u64>() + t.frame_count();

            let m = running_max.unwrap_or(len);
            let full = len <= m && len as i64 >= m as i64 - margin as i64;
            running_max = Some(m.max(len));

            prop_assert!(t.size_max() >= prev_max, "size_max shrank");
            prop_assert_eq!(Some(t.size_max()), running_max);
            let inc = after - before;
            prop_assert!(inc <= 1, "{} frames on one packet", inc);
            if inc == 1 {
                prop_assert!(full_since_count > 0, "frame counted without a full-size packet since the last one");
                prop_assert!((len as i64) < m as i64 - margin as i64, "frame closed by a full-size packet");
                full_since_count = 0;
                counted += 1;
            }
            if full {
                full_since_count += 1;
                fulls += 1;
            }
        }
        prop_assert!(counted <= fulls);

        let mut flat = FrameRateTracker::new(1_000_000, margin);
        let mut flat_out = Vec::new();
        let mut ts = 0i64;
        for &(gap, _) in &pkts {
            ts += gap;
            flat.track(pkts[0].1, Timestamp::from_micros(ts), &mut flat_out);
        }
        prop_assert!(flat_out.iter().all(|s| s.fps == 0.0) && flat.frame_count() == 0, "constant sizes produced frames");
        Ok(())
    });
    let ok = res.is_ok();
    verdict("C7 frame counter", ok, format!("{CASES} cases: {}", res.as_ref().err().map_or("no violations".to_string(), |e| e.to_string())));
    assert!(ok, "{res:?}");
}

fn pkt(ts: i64, t: FiveTuple, len: u32) -> PacketRecord {
    let tcp = (t.proto == Proto::Tcp).then_some(TcpMeta { seq: 1, ack: 1, flags: TcpFlags(TcpFlags::ACK), header_len: 20 });
    PacketRecord { ts: Timestamp::from_micros(ts), five_tuple: t, payload_len: len, tcp, server_name: None, is_fragment: false }
}

fn endpoint(client: bool, i: u8) -> IpAddr {
    if client {
        IpAddr::from([192, 0, 2, 10 + i])
    } else {
        IpAddr::from([203, 0, 113, 1 + i])
    }
}

/// (client ip, client port, server ip, server port, tcp) -> (pkts, bytes in, bytes out)
type Tally = HashMap<(IpAddr, u16, IpAddr, u16, bool), (u64, u64, u64)>;

type Draw = (i64, bool, u8, u8, u16, bool, u32);

fn table_stream() -> impl Strategy<Value = Vec<Draw>> {
    // gap, TCP?, client, server, port pair, upstream?, payload
    prop::collection::vec((0i64..2_500_000, any::<bool>(), 0u8..2, 0u8..2, 0u16..3, any::<bool>(), 0u32..1500), 1..200)
}

#[test]
fn c8_window_conservation_and_orientation() {
    const CASES: u32 = 1_000;
    let nets: ClientNets = CLIENT_NETS.parse().unwrap();
    let mut runner = TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
    let res = runner.run(&(table_stream(), 1usize..8), |(specs, max_windows)| {
        let small = FlowTableConfig { max_windows, ..FlowTableConfig::default() };
        let mut ring = FlowTable::new(nets.clone(), small);
        let mut wide = FlowTable::new(nets.clone(), FlowTableConfig::default());
        let mut oracle: Tally = HashMap::new();
        let mut ts = 5_000_000_000i64;
        for (gap, tcp, c, s, port, up, len) in specs {
            ts += gap;
            let (cip, cport, sip, sport) = (endpoint(true, c), 50_000 + port, endpoint(false, s), 49_000 + port);
            let proto = if tcp { Proto::Tcp } else { Proto::Udp };
            let wire = if up {
                FiveTuple { src_ip: cip, src_port: cport, dst_ip: sip, dst_port: sport, proto }
            } else {
                FiveTuple { src_ip: sip, src_port: sport, dst_ip: cip, dst_port: cport, proto }
            };

            let o = nets.orient(&wire);
            let back = nets.orient(&wire.reversed());
            prop_assert_eq!(o.key, back.key);
            prop_assert_ne!(o.direction, back.direction);
            prop_assert_eq!(wire.reversed().reversed(), wire);
            prop_assert_eq!(o.direction, if up { Direction::Upstream } else { Direction::Downstream });
            prop_assert_eq!((o.key.client_ip, o.key.client_port, o.key.server_ip, o.key.server_port), (cip, cport, sip, sport));

            ring.update(&pkt(ts, wire, len));
            wide.update(&pkt(ts, wire, len));
            let e = oracle.entry((cip, cport, sip, sport, tcp)).or_default();
            e.0 += 1;
            if up {
                e.2 += len as u64;
            } else {
                e.1 += len as u64;
            }
        }
        prop_assert_eq!(ring.len(), oracle.len());
        prop_assert_eq!(wide.len(), oracle.len());
        for f in ring.flows() {
            let (n, _, _) = oracle[&(f.key.client_ip, f.key.client_port, f.key.server_ip, f.key.server_port, f.key.proto == Proto::Tcp)];
            let kept: u64 = f.retained_windows().chain([f.current_window()]).map(VolumetricStats::pkt_count).sum();
            prop_assert_eq!(f.total_pkts, n);
            prop_assert_eq!(f.retired_pkts() + kept, n);
            prop_assert!(f.retained_windows().count() <= max_windows);
        }
        for f in wide.flows() {
            let (n, bin, bout) = oracle[&(f.key.client_ip, f.key.client_port, f.key.server_ip, f.key.server_port, f.key.proto == Proto::Tcp)];
            let ws: Vec<&VolumetricStats> = f.retained_windows().chain([f.current_window()]).collect();
            prop_assert_eq!(ws.iter().map(|w| w.pkt_count()).sum::<u64>(), n);
            prop_assert_eq!(ws.iter().map(|w| w.byte_count_in).sum::<u64>(), bin);
            prop_assert_eq!(ws.iter().map(|w| w.byte_count_out).sum::<u64>(), bout);
            for pair in ws.windows(2) {
                prop_assert_eq!(pair[0].window_end(), pair[1].window_start, "gap in the window series");
            }
        }
        Ok(())
    });
    let ok = res.is_ok();
    verdict("C8 flow windows", ok, format!("{CASES} cases: {}", res.as_ref().err().map_or("no violations".to_string(), |e| e.to_string())));
    assert!(ok, "{res:?}");
}

#[test]
fn c9_gigabyte_capture() {
    // 30 Mbit/s of video plus audio and input: about 3.9 MB of frames a second.
    let mut p = SessionProfile::new(ProfileKind::GfnDesktop, 60, Resolution::Fhd, 20.0, 265, 9001).unwrap();
    p.bitrate_mbps = Some(30.0);
    let (mut cap, m) = gen_session(&p).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.pcap");
    cap.write_file(&path, LinkType::Ethernet).unwrap();
    drop(cap);
    let size = std::fs::metadata(&path).unwrap().len();
    let codebook = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/codebook.toml");
    let out = dir.path().join("out");

    let t = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_cgl"))
        .args(["analyze", "--client-nets", CLIENT_NETS, "--codebook", codebook])
        .arg("--pcap")
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    let elapsed = t.elapsed();

    let sessions = std::fs::read_to_string(out.join("sessions.jsonl")).unwrap_or_default();
    let found = sessions.lines().filter(|l| l.contains(&format!("\"{}\"", m.setup))).count();
    let counters: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("counters.json")).unwrap_or_default()).unwrap_or_default();
    let packets = counters["packets"].as_u64().unwrap_or(0);
    let ok = size >= 1_000_000_000 && status.success() && found == 1 && packets == m.packet_count && elapsed <= Duration::from_secs(60);
    verdict(
        "C9 throughput",
        ok,
        format!("{:.2} GB, {packets}/{} packets analyzed in {:.1}s, exit {:?}", size as f64 / 1e9, m.packet_count, elapsed.as_secs_f64(), status.code()),
    );
    assert!(ok);
}
