use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cgl_core::classify::FlowRole;
use cgl_core::synth::GroundTruthManifest;

fn cgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgl")).args(args).output().unwrap()
}

fn codebook() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/codebook.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["generate", "--out", s(&path)];
    args.extend_from_slice(extra);
    let o = cgl(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

fn analyze(pcap: &Path, out: &Path) -> Output {
    cgl(&["analyze", "--pcap", s(pcap), "--client-nets", "192.0.2.0/24", "--codebook", codebook(), "--out", s(out)])
}

#[test]
fn generate_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = generate(dir.path(), "s.pcap", &["--profile", "gfn-browser", "--fps", "60", "--resolution", "hd", "--duration", "12", "--seed", "3"]);
    let manifest = GroundTruthManifest::path_for(&pcap);
    assert!(manifest.exists());

    let out = dir.path().join("out");
    let o = analyze(&pcap, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sessions = fs::read_to_string(out.join("sessions.jsonl")).unwrap();
    assert!(sessions.lines().next().unwrap().contains("cgl-sessions/1"));
    assert_eq!(sessions.lines().count(), 2);
    assert!(sessions.contains("\"gfn\""));
    let qoe = fs::read_to_string(out.join("qoe.csv")).unwrap();
    assert!(qoe.starts_with("# schema: cgl-qoe/1"));
    assert!(out.join("counters.json").exists());

    let o = cgl(&["report", "--in", s(&out.join("qoe.csv")), "--truth", s(&manifest)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], "cgl-report/1");
    let t = &v["truth"];
    assert!(t["mean_abs_fps_error"].as_f64().unwrap() < 2.0, "{t}");
    assert!(t["resolution_accuracy"].as_f64().unwrap() >= 0.95, "{t}");

    let csv_out = dir.path().join("summary.csv");
    let o = cgl(&["report", "--in", s(&out.join("qoe.csv")), "--format", "csv", "--out", s(&csv_out)]);
    assert!(o.status.success());
    assert!(fs::read_to_string(&csv_out).unwrap().contains("browser"));
}

#[test]
fn generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--profile", "gfn-mobile", "--fps", "30", "--resolution", "sd", "--duration", "6", "--seed", "11"];
    let a = generate(dir.path(), "a.pcap", &args);
    let b = generate(dir.path(), "b.pcap", &args);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = generate(dir.path(), "c.pcap", &["--profile", "gfn-mobile", "--fps", "30", "--resolution", "sd", "--duration", "6", "--seed", "12"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn xbox_browser_has_one_combined_flow() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = generate(dir.path(), "x.pcap", &["--profile", "xbox-pc-browser", "--fps", "60", "--resolution", "fhd", "--duration", "6", "--link", "raw"]);
    let m = GroundTruthManifest::load(&GroundTruthManifest::path_for(&pcap)).unwrap();
    assert_eq!(m.flows.iter().filter(|f| f.role == FlowRole::CombinedMediaInput).count(), 1);
    assert!(m.mgmt.is_none());
    let out = dir.path().join("out");
    assert!(analyze(&pcap, &out).status.success());
    assert!(fs::read_to_string(out.join("sessions.jsonl")).unwrap().contains("combined_media_input"));
}

#[test]
fn bad_generate_arguments_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.pcap");
    for bad in [
        ["--profile", "gfn-desktop", "--fps", "45", "--resolution", "hd"],
        ["--profile", "gfn-desktop", "--fps", "60", "--resolution", "4k"],
        ["--profile", "stadia", "--fps", "60", "--resolution", "hd"],
    ] {
        let mut args = vec!["generate", "--out", s(&out)];
        args.extend_from_slice(&bad);
        assert_eq!(cgl(&args).status.code(), Some(1), "{bad:?}");
    }
    let o = cgl(&["generate", "--out", s(&out), "--profile", "gfn-desktop", "--fps", "60", "--resolution", "fhd", "--bitrate-mbps", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn analyze_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(analyze(&dir.path().join("missing.pcap"), &out).status.code(), Some(1));

    let junk = dir.path().join("junk.pcap");
    fs::write(&junk, b"definitely not a capture file").unwrap();
    assert_eq!(analyze(&junk, &out).status.code(), Some(2));

    let o = cgl(&["analyze", "--pcap", s(&junk), "--client-nets", "192.0.2.0/24", "--codebook", s(&dir.path().join("nope.toml"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = cgl(&["analyze", "--pcap", s(&junk), "--client-nets", "not-a-net", "--codebook", codebook()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn truncated_capture_keeps_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = generate(dir.path(), "t.pcap", &["--profile", "gfn-desktop", "--fps", "30", "--resolution", "hd", "--duration", "8"]);
    let bytes = fs::read(&pcap).unwrap();
    fs::write(&pcap, &bytes[..bytes.len() - 7]).unwrap();
    let out = dir.path().join("out");
    let o = analyze(&pcap, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
    let sessions = fs::read_to_string(out.join("sessions.jsonl")).unwrap();
    assert_eq!(sessions.lines().count(), 2);
}

#[test]
fn report_rejects_foreign_schema() {
    let dir = tempfile::tempdir().unwrap();
    let qoe = dir.path().join("qoe.csv");
    fs::write(&qoe, "# schema: cgl-qoe/9\nts,session_id\n").unwrap();
    let o = cgl(&["report", "--in", s(&qoe)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));
}

#[test]
fn several_captures_get_prefixed_ids() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.pcap", &["--profile", "gfn-desktop", "--fps", "60", "--resolution", "hd", "--duration", "6", "--seed", "1"]);
    let b = generate(dir.path(), "b.pcap", &["--profile", "xbox-console", "--fps", "60", "--resolution", "hd", "--duration", "6", "--seed", "2"]);
    let out = dir.path().join("out");
    let o = cgl(&[
        "analyze", "--pcap", s(&a), "--pcap", s(&b), "--client-nets", "192.0.2.0/24", "--codebook", codebook(), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sessions = fs::read_to_string(out.join("sessions.jsonl")).unwrap();
    assert!(sessions.contains("\"p0-") && sessions.contains("\"p1-"), "{sessions}");
}
