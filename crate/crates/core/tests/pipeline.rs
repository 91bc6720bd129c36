use std::io::Cursor;

use cgl_core::capture::{CaptureReader, LinkType};
use cgl_core::classify::FlowRole;
use cgl_core::detect::{Codebook, DetectionSource};
use cgl_core::qoe::Resolution;
use cgl_core::synth::{gen_background, gen_session, GroundTruthManifest, ProfileKind, SessionProfile, SyntheticCapture};
use cgl_core::{AnalysisReport, Analyzer, AnalyzerConfig};

fn analyze_capture(cap: &mut SyntheticCapture, link: LinkType) -> AnalysisReport {
    let reader = CaptureReader::new(Cursor::new(cap.to_pcap_bytes(link))).unwrap();
    let cb = Codebook::default();
    let cfg = AnalyzerConfig::new("192.0.2.0/24".parse().unwrap(), cb.criteria);
    Analyzer::new(cb, cfg).run(reader).unwrap()
}

fn analyze(p: &SessionProfile) -> (AnalysisReport, GroundTruthManifest) {
    let (mut cap, m) = gen_session(p).unwrap();
    (analyze_capture(&mut cap, LinkType::Ethernet), m)
}

fn roles(r: &AnalysisReport) -> Vec<FlowRole> {
    let mut v: Vec<FlowRole> = r.sessions[0].gameplay_flows.iter().map(|(_, r)| *r).collect();
    v.sort();
    v
}

#[test]
fn every_profile_is_detected_with_its_setup() {
    for kind in ProfileKind::ALL {
        let p = SessionProfile::new(kind, 60, Resolution::Hd, 20.0, 12, 5).unwrap();
        let (r, m) = analyze(&p);
        assert_eq!(r.sessions.len(), 1, "{kind}: {:?}", r.sessions);
        let s = &r.sessions[0];
        assert_eq!(s.platform_id, m.platform, "{kind}");
        assert_eq!(s.setup, m.setup, "{kind}");
        assert_eq!(s.detected_by, DetectionSource::Codebook);
        let mut truth: Vec<FlowRole> = m.flows.iter().map(|f| f.role).collect();
        truth.sort();
        assert_eq!(roles(&r), truth, "{kind}");
        for (key, role) in &s.gameplay_flows {
            let t = m.role_of(key.client_port, key.server_ip, key.server_port, key.proto);
            assert_eq!(t, Some(*role), "{kind} {key}");
        }
    }
}

#[test]
fn qoe_rows_follow_the_stream() {
    let p = SessionProfile::new(ProfileKind::GfnDesktop, 60, Resolution::Fhd, 20.0, 15, 2).unwrap();
    let (r, m) = analyze(&p);
    let start = m.timeline.gameplay_start;
    let steady: Vec<_> = r.qoe.iter().filter(|q| !q.warmup && q.ts.as_secs_f64() >= start && q.fps.is_some()).collect();
    assert!(steady.len() >= 10, "{}", steady.len());
    for q in &steady {
        assert!((q.fps.unwrap() - 60.0).abs() <= 5.0, "{q:?}");
        assert_eq!(q.resolution, Resolution::Fhd, "{q:?}");
    }
    let lat: Vec<f64> = r.qoe.iter().filter_map(|q| q.latency_ms).collect();
    let mean = lat.iter().sum::<f64>() / lat.len() as f64;
    assert!((mean - 20.0).abs() < 1.0, "{mean}");
}

#[test]
fn stripped_names_fall_back_to_handshake_sizes() {
    for kind in [ProfileKind::GfnDesktop, ProfileKind::GfnMobile, ProfileKind::GfnBrowser] {
        let mut p = SessionProfile::new(kind, 30, Resolution::Hd, 20.0, 10, 8).unwrap();
        p.strip_sni = true;
        let (r, m) = analyze(&p);
        assert_eq!(r.sessions.len(), 1, "{kind}");
        let s = &r.sessions[0];
        assert_eq!(s.detected_by, DetectionSource::Signature);
        assert_eq!(s.os, m.os, "{kind}");
        assert_eq!(s.setup, m.setup, "{kind}");
    }
}

#[test]
fn raw_ip_and_ethernet_agree() {
    let p = SessionProfile::new(ProfileKind::GfnBrowser, 30, Resolution::Sd, 20.0, 8, 4).unwrap();
    let (mut cap, _) = gen_session(&p).unwrap();
    let a = analyze_capture(&mut cap, LinkType::Ethernet);
    let b = analyze_capture(&mut cap, LinkType::RawIp);
    assert_eq!(a.sessions, b.sessions);
    assert_eq!(a.qoe, b.qoe);
}

#[test]
fn background_only_has_no_sessions() {
    let mut cap = gen_background(3, "192.0.2.44".parse().unwrap(), 20);
    let r = analyze_capture(&mut cap, LinkType::Ethernet);
    assert!(r.sessions.is_empty());
    assert!(r.qoe.is_empty());
    assert!(r.counters.packets > 0);
}

#[test]
fn two_clients_in_one_capture() {
    let a = SessionProfile::new(ProfileKind::GfnDesktop, 60, Resolution::Hd, 10.0, 10, 21).unwrap();
    let mut b = SessionProfile::new(ProfileKind::XboxPcBrowser, 60, Resolution::Hd, 30.0, 10, 22).unwrap();
    if b.client_ip == a.client_ip {
        b.client_ip = std::net::Ipv4Addr::new(192, 0, 2, 251);
    }
    let (mut cap, _) = gen_session(&a).unwrap();
    cap.merge(gen_session(&b).unwrap().0);
    let r = analyze_capture(&mut cap, LinkType::Ethernet);
    let mut setups: Vec<_> = r.sessions.iter().map(|s| s.setup).collect();
    setups.sort();
    let mut want = vec![a.setup(), b.setup()];
    want.sort();
    assert_eq!(setups, want);
}

#[test]
fn analysis_is_deterministic() {
    let p = SessionProfile::new(ProfileKind::XboxConsole, 60, Resolution::Fhd, 20.0, 8, 6).unwrap();
    let (a, _) = analyze(&p);
    let (b, _) = analyze(&p);
    assert_eq!(a.sessions, b.sessions);
    assert_eq!(a.qoe, b.qoe);
    assert_eq!(a.counters, b.counters);
}
