use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cgl_core::capture::{read_capture, CaptureError, CaptureSource, LinkType};
use cgl_core::detect::{Codebook, Os};
use cgl_core::flow::ClientNets;
use cgl_core::qoe::Resolution;
use cgl_core::report::{self, Summary};
use cgl_core::synth::{gen_session, GroundTruthManifest, ProfileKind, SessionProfile};
use cgl_core::{AnalysisReport, Analyzer, AnalyzerConfig};

#[derive(Parser)]
#[command(name = "cgl", version, about = "Cloud-gaming session detection and QoE from packet captures")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Detect gaming sessions in captures and measure their QoE.
    Analyze(AnalyzeArgs),
    /// Write a synthetic session capture and its ground-truth manifest.
    Generate(GenerateArgs),
    /// Summarize a QoE series.
    Report(ReportArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Capture file; repeat for several captures.
    #[arg(long, required = true)]
    pcap: Vec<PathBuf>,
    /// Client networks, comma-separated CIDRs.
    #[arg(long)]
    client_nets: String,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Window and frame-rate interval in seconds.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    /// Downstream bit rate above which a flow is video (bit/s).
    #[arg(long)]
    video_min_bps: Option<f64>,
    /// Largest up/down packet-rate difference of an input flow.
    #[arg(long)]
    input_pps_delta: Option<f64>,
    /// Packet-rate dominance that makes a flow audio.
    #[arg(long)]
    audio_pps_delta: Option<f64>,
    #[arg(long)]
    stun_max_pps: Option<f64>,
    #[arg(long)]
    combined_min_pps: Option<f64>,
    /// Gameplay flows must start this close to the registration (s).
    #[arg(long)]
    mgmt_window_s: Option<f64>,
    /// Name memory and idle-session horizon (s).
    #[arg(long, default_value_t = 600.0)]
    horizon_s: f64,
    #[arg(long, default_value_t = 0.6)]
    setup_threshold: f64,
    /// Gameplay ends after its flows are silent this long (s).
    #[arg(long, default_value_t = 10.0)]
    gameplay_idle_s: f64,
    /// Payload size margin of the frame counter (bytes).
    #[arg(long, default_value_t = 1)]
    fps_size_margin: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum Link {
    Ethernet,
    Raw,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    profile: String,
    #[arg(long)]
    fps: u32,
    #[arg(long)]
    resolution: String,
    #[arg(long, default_value_t = 20.0)]
    rtt_ms: f64,
    /// Gameplay seconds.
    #[arg(long, default_value_t = 60)]
    duration: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Capture path; the manifest goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Client OS, where the setup allows a choice.
    #[arg(long)]
    os: Option<String>,
    /// Send every ClientHello without a server name.
    #[arg(long)]
    strip_sni: bool,
    /// Fixed video bit rate in Mbit/s instead of a seeded draw.
    #[arg(long)]
    bitrate_mbps: Option<f64>,
    #[arg(long, value_enum, default_value = "ethernet")]
    link: Link,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// QoE series written by `analyze`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Sessions file; defaults to sessions.jsonl beside the series.
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, err: e.into() }
    }
}

fn malformed(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CGL_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Analyze(a) => analyze(a),
        Cmd::Generate(g) => generate(g),
        Cmd::Report(r) => run_report(r),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn analyzer_config(a: &AnalyzeArgs, codebook: &Codebook, prefix: String) -> Result<AnalyzerConfig, Failure> {
    let nets: ClientNets = a.client_nets.parse()?;
    if nets.nets().is_empty() {
        return Err(anyhow!("--client-nets names no network").into());
    }
    if !(a.interval > 0.0 && a.interval.is_finite()) {
        return Err(anyhow!("--interval must be positive").into());
    }
    let mut c = codebook.criteria;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut c.video_min_bps_in, a.video_min_bps);
    set(&mut c.input_pps_delta_max, a.input_pps_delta);
    set(&mut c.audio_dominance_pps_delta, a.audio_pps_delta);
    set(&mut c.stun_max_pps, a.stun_max_pps);
    set(&mut c.combined_min_pps, a.combined_min_pps);
    set(&mut c.mgmt_window_s, a.mgmt_window_s);
    c.validate()?;
    let mut cfg = AnalyzerConfig::new(nets, c);
    cfg.interval_us = (a.interval * 1e6).round() as i64;
    cfg.detector.horizon_s = a.horizon_s;
    cfg.detector.setup_threshold = a.setup_threshold;
    cfg.gameplay_idle_us = (a.gameplay_idle_s * 1e6) as i64;
    cfg.fps_size_margin = a.fps_size_margin;
    cfg.session_id_prefix = prefix;
    Ok(cfg)
}

fn analyze_one(path: &Path, codebook: Codebook, cfg: AnalyzerConfig) -> Result<AnalysisReport, Failure> {
    let reader = match read_capture(CaptureSource::file(path)) {
        Ok(r) => r,
        Err(CaptureError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(anyhow!("cannot open {}: {e}", path.display()).into())
        }
        Err(e) => return Err(malformed(anyhow::Error::new(e).context(path.display().to_string()))),
    };
    Analyzer::new(codebook, cfg).run(reader).map_err(|e| malformed(anyhow::Error::new(e).context(path.display().to_string())))
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let codebook = Codebook::load(&a.codebook).with_context(|| "no usable codebook")?;
    let multi = a.pcap.len() > 1;
    let jobs: Vec<(PathBuf, AnalyzerConfig)> = a
        .pcap
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((p.clone(), analyzer_config(&a, &codebook, if multi { format!("p{i}-") } else { String::new() })?)))
        .collect::<Result<_, Failure>>()?;
    let results: Vec<Result<AnalysisReport, Failure>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(path, cfg)| {
                let cb = codebook.clone();
                s.spawn(move || analyze_one(&path, cb, cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("analysis worker panicked")).collect()
    });
    let mut reports = Vec::new();
    for r in results {
        reports.push(r?);
    }
    let rep = AnalysisReport::merge(reports);

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let sessions_path = a.out.join("sessions.jsonl");
    report::write_sessions_jsonl(BufWriter::new(File::create(&sessions_path)?), &rep.sessions)?;
    report::write_qoe_csv(BufWriter::new(File::create(a.out.join("qoe.csv"))?), &rep.qoe)?;
    let mut counters = BufWriter::new(File::create(a.out.join("counters.json"))?);
    serde_json::to_writer_pretty(&mut counters, &rep.counters)?;
    writeln!(counters)?;
    counters.flush()?;
    for w in &rep.counters.warnings {
        log::warn!("{w}");
    }
    log::info!("{} sessions, {} QoE rows, {} packets", rep.sessions.len(), rep.qoe.len(), rep.counters.packets);
    if rep.counters.truncated > 0 {
        return Err(malformed(anyhow!("capture is truncated; partial results written to {}", a.out.display())));
    }
    Ok(())
}

fn generate(g: GenerateArgs) -> Result<(), Failure> {
    let kind: ProfileKind = g.profile.parse()?;
    let res: Resolution = g.resolution.parse().map_err(|e| anyhow!("{e}"))?;
    let mut p = SessionProfile::new(kind, g.fps, res, g.rtt_ms, g.duration, g.seed)?;
    if let Some(os) = &g.os {
        p.os = Some(os.parse::<Os>()?);
    }
    p.strip_sni = g.strip_sni;
    p.bitrate_mbps = g.bitrate_mbps;
    p.validate()?;
    let (mut cap, manifest) = gen_session(&p)?;
    if let Some(dir) = g.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let link = match g.link {
        Link::Ethernet => LinkType::Ethernet,
        Link::Raw => LinkType::RawIp,
    };
    cap.write_file(&g.out, link).with_context(|| format!("writing {}", g.out.display()))?;
    let mpath = GroundTruthManifest::path_for(&g.out);
    manifest.save(&mpath)?;
    log::info!("{} packets to {}, manifest {}", manifest.packet_count, g.out.display(), mpath.display());
    Ok(())
}

fn run_report(r: ReportArgs) -> Result<(), Failure> {
    let rows = report::read_qoe_csv(BufReader::new(File::open(&r.input).with_context(|| format!("opening {}", r.input.display()))?))?;
    let sessions_path = r.sessions.clone().or_else(|| {
        let p = r.input.with_file_name("sessions.jsonl");
        p.exists().then_some(p)
    });
    let sessions = match sessions_path {
        Some(p) => report::read_sessions_jsonl(BufReader::new(File::open(&p).with_context(|| format!("opening {}", p.display()))?))?,
        None => Vec::new(),
    };
    let mut summary: Summary = report::summarize(&rows, &sessions);
    if let Some(t) = &r.truth {
        let m = GroundTruthManifest::load(t)?;
        summary.truth = Some(report::truth_metrics(&rows, &sessions, &m));
    }
    let mut out: Box<dyn Write> = match &r.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    match r.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &summary)?;
            writeln!(out)?;
        }
        Format::Csv => report::write_summary_csv(&mut out, &summary)?,
    }
    out.flush()?;
    Ok(())
}
