use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{FlowTruth, GroundTruthManifest, MgmtTruth, SecondTruth, Timeline, MANIFEST_SCHEMA};
use super::packet::{render_frame, Payload, Segment, WirePacket};
use super::profile::{target_range, ProfileKind, SessionProfile};
use super::tls::client_hello;
use super::video::{second_of_frames, Frame};
use super::writer::PcapWriter;
use super::{sub_rng, SynthError};
use crate::capture::{LinkType, Proto, TcpFlags};
use crate::classify::FlowRole;
use crate::detect::{Os, SetupClass};
use crate::Timestamp;

/// Capture clock origin (seconds since the epoch).
pub const T0_S: i64 = 1_700_000_000;
pub const HEARTBEAT_PERIOD_S: i64 = 2;
/// Payload of every management-flow ClientHello.
pub const MGMT_HELLO_LEN: u32 = 517;
/// Lead of the management ClientHello before the first gameplay packet.
pub const MGMT_LEAD_US: i64 = 300_000;
pub const STUN_PORT: u16 = 3478;

const US: i64 = 1_000_000;
const NO_BLOB: u32 = u32::MAX;

/// Console client ports of the four media flows.
pub const PORT_DOWN_AUDIO: u16 = 49003;
pub const PORT_UP_AUDIO: u16 = 49004;
pub const PORT_VIDEO: u16 = 49005;
pub const PORT_INPUT: u16 = 49006;

/// Downstream payload sizes after the management-flow handshake.
pub fn handshake_sizes(os: Os) -> &'static [u32] {
    match os {
        Os::Windows => &[1460, 1460, 502],
        Os::MacOs => &[1412, 1412],
        Os::Android => &[3455],
        Os::Ios => &[3450],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFlow {
    pub client: SocketAddr,
    pub server: SocketAddr,
    pub proto: Proto,
    pub role: Option<FlowRole>,
}

#[derive(Clone, Copy, Debug)]
struct Ev {
    ts: i64,
    flow: u32,
    up: bool,
    len: u32,
    seg: Option<Segment>,
    blob: u32,
}

/// Time-ordered packet plan of a synthetic capture, rendered on write.
#[derive(Clone, Debug, Default)]
pub struct SyntheticCapture {
    flows: Vec<SynthFlow>,
    events: Vec<Ev>,
    blobs: Vec<Vec<u8>>,
    sorted: bool,
}

impl SyntheticCapture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_flow(&mut self, client: SocketAddr, server: SocketAddr, proto: Proto, role: Option<FlowRole>) -> u32 {
        self.flows.push(SynthFlow { client, server, proto, role });
        (self.flows.len() - 1) as u32
    }

    pub fn udp(&mut self, flow: u32, ts_us: i64, up: bool, len: u32) {
        self.events.push(Ev { ts: ts_us, flow, up, len, seg: None, blob: NO_BLOB });
        self.sorted = false;
    }

    fn tcp(&mut self, flow: u32, ts_us: i64, up: bool, len: u32, seg: Segment, data: Option<Vec<u8>>) {
        let blob = match data {
            Some(d) => {
                debug_assert_eq!(d.len(), len as usize);
                self.blobs.push(d);
                (self.blobs.len() - 1) as u32
            }
            None => NO_BLOB,
        };
        self.events.push(Ev { ts: ts_us, flow, up, len, seg: Some(seg), blob });
        self.sorted = false;
    }

    /// Orders packets by time, keeping insertion order among equal stamps.
    pub fn finalize(&mut self) {
        if !self.sorted {
            self.events.sort_by_key(|e| e.ts);
            self.sorted = true;
        }
    }

    /// Appends another capture's flows and packets.
    pub fn merge(&mut self, other: SyntheticCapture) {
        let flow_base = self.flows.len() as u32;
        let blob_base = self.blobs.len() as u32;
        self.flows.extend(other.flows);
        self.blobs.extend(other.blobs);
        self.events.extend(other.events.into_iter().map(|mut e| {
            e.flow += flow_base;
            if e.blob != NO_BLOB {
                e.blob += blob_base;
            }
            e
        }));
        self.sorted = false;
    }

    pub fn flows(&self) -> &[SynthFlow] {
        &self.flows
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Payload bytes across all packets.
    pub fn payload_bytes(&self) -> u64 {
        self.events.iter().map(|e| e.len as u64).sum()
    }

    fn render(&self, e: &Ev, link: LinkType, ip_id: u16, buf: &mut Vec<u8>) {
        let f = &self.flows[e.flow as usize];
        let (src, dst) = if e.up { (f.client, f.server) } else { (f.server, f.client) };
        let payload = if e.blob == NO_BLOB { Payload::Zeros(e.len) } else { Payload::Bytes(&self.blobs[e.blob as usize]) };
        render_frame(buf, link, &WirePacket { src, dst, proto: f.proto, tcp: e.seg, payload }, ip_id);
    }

    /// Link-layer frames in time order.
    pub fn frames(&mut self, link: LinkType) -> Vec<(Timestamp, Vec<u8>)> {
        self.finalize();
        self.events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mut buf = Vec::new();
                self.render(e, link, i as u16, &mut buf);
                (Timestamp::from_micros(e.ts), buf)
            })
            .collect()
    }

    pub fn write_pcap<W: Write>(&mut self, out: W, link: LinkType) -> io::Result<W> {
        self.finalize();
        let mut w = PcapWriter::new(out, link)?;
        let mut buf = Vec::with_capacity(4096);
        for (i, e) in self.events.iter().enumerate() {
            buf.clear();
            self.render(e, link, i as u16, &mut buf);
            w.write_packet(Timestamp::from_micros(e.ts), &buf)?;
        }
        w.finish()
    }

    pub fn to_pcap_bytes(&mut self, link: LinkType) -> Vec<u8> {
        self.write_pcap(Vec::new(), link).expect("writing to memory cannot fail")
    }

    pub fn write_file(&mut self, path: &Path, link: LinkType) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pcap(BufWriter::with_capacity(1 << 20, f), link)?;
        Ok(())
    }
}

/// Sequence state of one synthetic TCP connection.
struct TcpConv {
    flow: u32,
    c: u32,
    s: u32,
}

impl TcpConv {
    /// Three-way handshake starting at `t`.
    fn open(cap: &mut SyntheticCapture, rng: &mut ChaCha8Rng, flow: u32, t: i64, rtt: i64) -> TcpConv {
        let (ic, is): (u32, u32) = (rng.random(), rng.random());
        cap.tcp(flow, t, true, 0, Segment { seq: ic, ack: 0, flags: TcpFlags::SYN }, None);
        cap.tcp(flow, t + rtt, false, 0, Segment { seq: is, ack: ic.wrapping_add(1), flags: TcpFlags::SYN | TcpFlags::ACK }, None);
        let conv = TcpConv { flow, c: ic.wrapping_add(1), s: is.wrapping_add(1) };
        cap.tcp(flow, t + rtt + 50, true, 0, Segment { seq: conv.c, ack: conv.s, flags: TcpFlags::ACK }, None);
        conv
    }

    fn up(&mut self, cap: &mut SyntheticCapture, t: i64, len: u32, data: Option<Vec<u8>>) {
        cap.tcp(self.flow, t, true, len, Segment { seq: self.c, ack: self.s, flags: TcpFlags::ACK | TcpFlags::PSH }, data);
        self.c = self.c.wrapping_add(len);
    }

    fn down(&mut self, cap: &mut SyntheticCapture, t: i64, len: u32) {
        cap.tcp(self.flow, t, false, len, Segment { seq: self.s, ack: self.c, flags: TcpFlags::ACK | TcpFlags::PSH }, None);
        self.s = self.s.wrapping_add(len);
    }

    fn ack_up(&self, cap: &mut SyntheticCapture, t: i64) {
        cap.tcp(self.flow, t, true, 0, Segment { seq: self.c, ack: self.s, flags: TcpFlags::ACK }, None);
    }

    fn close(&mut self, cap: &mut SyntheticCapture, t: i64, rtt: i64) {
        let fin = TcpFlags::FIN | TcpFlags::ACK;
        cap.tcp(self.flow, t, true, 0, Segment { seq: self.c, ack: self.s, flags: fin }, None);
        self.c = self.c.wrapping_add(1);
        cap.tcp(self.flow, t + rtt, false, 0, Segment { seq: self.s, ack: self.c, flags: fin }, None);
        self.s = self.s.wrapping_add(1);
        cap.tcp(self.flow, t + rtt + 50, true, 0, Segment { seq: self.c, ack: self.s, flags: TcpFlags::ACK }, None);
    }
}

/// Hands out distinct ephemeral client ports.
struct PortPool(Vec<u16>);

impl PortPool {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut v: Vec<u16> = (50000..=60999).collect();
        v.shuffle(rng);
        PortPool(v)
    }

    fn take(&mut self) -> u16 {
        self.0.pop().expect("port pool exhausted")
    }
}

fn platform_server(rng: &mut ChaCha8Rng) -> SocketAddr {
    SocketAddr::new(IpAddr::V4(Ipv4Addr::new(198, 51, 100, rng.random_range(2..=250))), 443)
}

/// A short HTTPS exchange opened by a ClientHello naming `name`.
fn https_flow(cap: &mut SyntheticCapture, rng: &mut ChaCha8Rng, client: SocketAddr, t: i64, rtt: i64, name: Option<&str>) {
    let f = cap.add_flow(client, platform_server(rng), Proto::Tcp, None);
    let mut c = TcpConv::open(cap, rng, f, t, rtt);
    let t1 = t + rtt + 100;
    let len = rng.random_range(300..=600u32);
    c.up(cap, t1, len, Some(client_hello(name, len as usize)));
    for (i, l) in [1400u32, 1400, 900].into_iter().enumerate() {
        c.down(cap, t1 + rtt + 100 * i as i64, l);
    }
    c.ack_up(cap, t1 + rtt + 400);
    let req = rng.random_range(80..=200);
    c.up(cap, t1 + rtt + 1_000, req, None);
    let resp = rng.random_range(200..=2_000);
    c.down(cap, t1 + 2 * rtt + 1_000, resp);
    c.ack_up(cap, t1 + 2 * rtt + 1_200);
    c.close(cap, t1 + 2 * rtt + 50_000, rtt);
}

/// A DNS-like request/response pair.
fn dns_pair(cap: &mut SyntheticCapture, client: SocketAddr, t: i64, rtt: i64) {
    let server = SocketAddr::new(IpAddr::V4(Ipv4Addr::new(198, 51, 100, 53)), 53);
    let f = cap.add_flow(client, server, Proto::Udp, None);
    cap.udp(f, t, true, 40);
    cap.udp(f, t + rtt, false, 120);
}

/// (core, setup-specific) service names the profile's client contacts.
fn platform_names(kind: ProfileKind) -> (Vec<&'static str>, Vec<&'static str>) {
    let gfn_core = vec![
        "login.nvidia.com",
        "userstore.nvidia.com",
        "events.geforcenow.com",
        "gfnpc.api.entitlement-prod.nvidiagrid.net",
        "server_euw1_pnt.nvidiagrid.net",
    ];
    let xbox_core = vec!["title.auth.xboxlive.com", "regional-node.weu.xboxlive.com"];
    match kind {
        ProfileKind::GfnDesktop => {
            (gfn_core, vec!["cms.nvidia.com", "als.geforcenow.com", "gx-target-experiments-frontend-api.geforce.com"])
        }
        ProfileKind::GfnMobile => (gfn_core, vec!["img.nvidiagrid.net"]),
        ProfileKind::GfnBrowser => (gfn_core, vec!["play.nvidia.com", "gx-target-experiments-frontend-api.geforce.com"]),
        ProfileKind::XboxConsole => (xbox_core, vec!["xgpuconsole.gssv-play-prod.xboxlive.com"]),
        ProfileKind::XboxPcBrowser => (xbox_core, vec!["xgpuweb.gssv-play-prod.xboxlive.com"]),
        ProfileKind::XboxMobileBrowser => (xbox_core, vec!["xgpu.gssv-play-prod.xboxlive.com"]),
    }
}

/// Two-state input activity, switching at most once a second.
fn input_rates(rng: &mut ChaCha8Rng, seconds: u32) -> Vec<(u32, u32)> {
    let mut active = false;
    (0..seconds)
        .map(|_| {
            let r = if active { (rng.random_range(40..=267), 38) } else { (11, 12) };
            if rng.random_bool(0.3) {
                active = !active;
            }
            r
        })
        .collect()
}

/// Upstream input packet times and sizes.
fn input_packets(g: i64, rates: &[(u32, u32)]) -> Vec<(i64, u32)> {
    let mut v = Vec::new();
    for (s, &(rate, len)) in rates.iter().enumerate() {
        for j in 0..rate as i64 {
            v.push((g + s as i64 * US + 3_000 + j * (US - 6_000) / rate as i64, len));
        }
    }
    v
}

/// Segment bitrates: one draw per resolution-schedule entry.
fn draw_bitrates(p: &SessionProfile, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut per_second = Vec::with_capacity(p.duration_s as usize);
    let mut current = None;
    for s in 0..p.duration_s {
        let res = p.resolution_at(s);
        let fps = p.fps_at(s);
        let seg_start = p
            .resolution_schedule
            .iter()
            .map(|e| e.0)
            .chain(p.fps_schedule.iter().map(|e| e.0))
            .filter(|&t| t <= s)
            .max()
            .unwrap_or(0);
        let key = (seg_start, fps, res);
        let bps = match (current, p.bitrate_mbps) {
            (_, Some(b)) => b * 1e6,
            (Some((k, b)), None) if k == key => b,
            _ => {
                let (lo, hi) = target_range(fps, res).expect("validated profile");
                rng.random_range(lo..=hi) * 1e6
            }
        };
        current = Some((key, bps));
        per_second.push(bps);
    }
    per_second
}

/// Generates a full session: platform phase, management flow and gameplay
/// flows, with its ground-truth manifest.
pub fn gen_session(p: &SessionProfile) -> Result<(SyntheticCapture, GroundTruthManifest), SynthError> {
    p.validate()?;
    let mut rng = sub_rng(p.seed, 1);
    let mut cap = SyntheticCapture::new();
    let client_ip = IpAddr::V4(p.client_ip);
    let server_ip = IpAddr::V4(p.server_ip);
    let rtt = ((p.rtt_ms * 1000.0).round() as i64).max(1);
    let t0 = T0_S * US;
    let g = t0 + p.platform_s as i64 * US;
    let e = g + p.duration_s as i64 * US;
    let mut ports = PortPool::new(&mut rng);
    let sni = |n: &'static str| (!p.strip_sni).then_some(n);

    // Platform phase: core names in order, then the setup's own names.
    dns_pair(&mut cap, SocketAddr::new(client_ip, ports.take()), t0 + 100_000, rtt);
    let (core, mut setup) = platform_names(p.kind);
    setup.shuffle(&mut rng);
    let mut t = t0 + 500_000;
    for name in core.into_iter().chain(setup) {
        https_flow(&mut cap, &mut rng, SocketAddr::new(client_ip, ports.take()), t, rtt, sni(name));
        t += 250_000;
    }
    let bg = rng.random_range(t0 + 200_000..g - US);
    https_flow(&mut cap, &mut rng, SocketAddr::new(client_ip, ports.take()), bg, rtt, sni("www.example.com"));

    // Management flow with handshake signature and heartbeats.
    let mut mgmt = None;
    if p.platform_id() == crate::detect::PlatformId::Gfn {
        let os = p.os.expect("validated profile has an OS");
        let (port, class) = if p.kind == ProfileKind::GfnBrowser { (49100, SetupClass::Browser) } else { (322, SetupClass::App) };
        let f = cap.add_flow(
            SocketAddr::new(client_ip, ports.take()),
            SocketAddr::new(server_ip, port),
            Proto::Tcp,
            Some(FlowRole::GameplayMgmt),
        );
        let t_hello = g - MGMT_LEAD_US;
        let mut c = TcpConv::open(&mut cap, &mut rng, f, t_hello - rtt - 1_000, rtt);
        let o = p.server_ip.octets();
        let name = format!("{}-{}-{}-{}.pnt.nvidiagrid.net", o[0], o[1], o[2], o[3]);
        let hello = client_hello((!p.strip_sni).then_some(name.as_str()), MGMT_HELLO_LEN as usize);
        c.up(&mut cap, t_hello, MGMT_HELLO_LEN, Some(hello));
        let sizes = handshake_sizes(os);
        for (i, &l) in sizes.iter().enumerate() {
            c.down(&mut cap, t_hello + rtt + 100 * i as i64, l);
        }
        c.ack_up(&mut cap, t_hello + rtt + 500);
        let jitter = 500.min(rtt / 2);
        let mut hb = g + US;
        while hb < e {
            let l = rng.random_range(40..=120);
            c.up(&mut cap, hb, l, None);
            let reply = hb + rtt + rng.random_range(-jitter..=jitter);
            let rl = rng.random_range(40..=120);
            c.down(&mut cap, reply, rl);
            c.ack_up(&mut cap, reply + 200);
            hb += HEARTBEAT_PERIOD_S * US;
        }
        c.close(&mut cap, e + 200_000, rtt);
        mgmt = Some(MgmtTruth { server_port: port, class, os, upstream_sizes: vec![MGMT_HELLO_LEN], downstream_sizes: sizes.to_vec() });

        // A platform service reconnecting mid-gameplay.
        let mid = g + (p.duration_s as i64 / 2) * US + 400_000;
        https_flow(&mut cap, &mut rng, SocketAddr::new(client_ip, ports.take()), mid, rtt, sni("events.geforcenow.com"));
    }

    let bitrates = draw_bitrates(p, &mut rng);
    let mut vrng = sub_rng(p.seed, 2);
    let mut frames: Vec<Frame> = Vec::new();
    for s in 0..p.duration_s {
        second_of_frames(&mut vrng, p.fps_at(s), bitrates[s as usize], g - t0 + s as i64 * US, &mut frames);
    }
    for f in &mut frames {
        f.start_us += t0;
    }
    let rates = input_rates(&mut sub_rng(p.seed, 3), p.duration_s);
    let inputs = input_packets(g, &rates);
    let secs = p.duration_s as i64;

    if p.kind.console_layout() {
        let base: u16 = rng.random_range(20000..=29000);
        let flow = |cap: &mut SyntheticCapture, cport: u16, off: u16, role| {
            cap.add_flow(SocketAddr::new(client_ip, cport), SocketAddr::new(server_ip, base + off), Proto::Udp, Some(role))
        };
        let video = flow(&mut cap, PORT_VIDEO, 0, FlowRole::DownVideo);
        let down_audio = flow(&mut cap, PORT_DOWN_AUDIO, 1, FlowRole::DownAudio);
        let up_audio = flow(&mut cap, PORT_UP_AUDIO, 2, FlowRole::UpAudio);
        let input = flow(&mut cap, PORT_INPUT, 3, FlowRole::UserInput);

        for fr in &frames {
            for (ts, len) in fr.packets() {
                cap.udp(video, ts, false, len);
            }
        }
        for s in 0..secs {
            // Receiver reports on the video flow.
            cap.udp(video, g + s * US + 250_000, true, 12);
            cap.udp(video, g + s * US + 750_000, true, 12);
            // Reverse directions of the audio flows: 2 pps, 156 bit/s.
            for (k, off) in [(0, 100_000), (1, 600_000)] {
                let len = if (2 * s + k) % 4 == 3 { 9 } else { 10 };
                cap.udp(down_audio, g + s * US + off, true, len);
                cap.udp(up_audio, g + s * US + off + 50_000, false, len);
            }
        }
        for i in 0..300 * secs {
            cap.udp(down_audio, g + 1_000 + i * US / 300, false, if i % 12 < 5 { 16 } else { 15 });
        }
        for i in 0..100 * secs {
            cap.udp(up_audio, g + 2_000 + i * US / 100, true, if i % 4 == 0 { 18 } else { 19 });
        }
        for &(ts, len) in &inputs {
            cap.udp(input, ts, true, len);
            cap.udp(input, ts + 1_000, false, 4);
        }
    } else {
        let (media_port, stun_port) = match p.platform_id() {
            crate::detect::PlatformId::XboxCloud => {
                let a = rng.random_range(1040..=1190u16);
                let mut b = rng.random_range(1040..=1190u16);
                if b == a {
                    b = if a == 1190 { 1040 } else { a + 1 };
                }
                (a, b)
            }
            crate::detect::PlatformId::Gfn => (rng.random_range(20000..=29000), STUN_PORT),
        };
        let media = cap.add_flow(
            SocketAddr::new(client_ip, ports.take()),
            SocketAddr::new(server_ip, media_port),
            Proto::Udp,
            Some(FlowRole::CombinedMediaInput),
        );
        let stun = cap.add_flow(
            SocketAddr::new(client_ip, ports.take()),
            SocketAddr::new(server_ip, stun_port),
            Proto::Udp,
            Some(FlowRole::StunWebrtc),
        );
        // Downstream audio and input echoes ride right behind each marker.
        let mut next_input = 0;
        for fr in &frames {
            for (ts, len) in fr.packets() {
                cap.udp(media, ts, false, len);
            }
            let m = fr.marker_offset_us();
            let fps = p.fps_at(((m - g).max(0) / US) as u32) as i64;
            let mut t = m + 300;
            for i in 0..300 / fps {
                cap.udp(media, t, false, if i % 12 < 5 { 16 } else { 15 });
                t += 200;
            }
            while next_input < inputs.len() && inputs[next_input].0 < m {
                cap.udp(media, t, false, 4);
                t += 100;
                next_input += 1;
            }
        }
        for i in 0..100 * secs {
            cap.udp(media, g + 2_000 + i * US / 100, true, if i % 4 == 0 { 18 } else { 19 });
        }
        for &(ts, len) in &inputs {
            cap.udp(media, ts, true, len);
        }
        let mut s = 0;
        while s < secs {
            let t = g + 10_000 + s * US;
            cap.udp(stun, t, true, 96);
            cap.udp(stun, t + rtt.max(1_000), false, 64);
            s += 2;
        }
    }
    cap.finalize();

    let flows = cap
        .flows()
        .iter()
        .filter_map(|f| {
            f.role.map(|role| FlowTruth {
                proto: f.proto,
                client_ip: f.client.ip(),
                client_port: f.client.port(),
                server_ip: f.server.ip(),
                server_port: f.server.port(),
                role,
            })
        })
        .collect();
    let seconds = (0..p.duration_s)
        .map(|s| SecondTruth {
            ts: (T0_S + p.platform_s as i64 + s as i64) as f64,
            fps: p.fps_at(s),
            bitrate_mbps: bitrates[s as usize] / 1e6,
            resolution: p.resolution_at(s),
        })
        .collect();
    let manifest = GroundTruthManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        profile: p.kind,
        platform: p.platform_id(),
        setup: p.setup(),
        os: p.os,
        seed: p.seed,
        rtt_ms: p.rtt_ms,
        client_ip,
        server_ip,
        strip_sni: p.strip_sni,
        heartbeat_period_s: HEARTBEAT_PERIOD_S as f64,
        timeline: Timeline {
            platform_start: T0_S as f64,
            gameplay_start: (g / US) as f64,
            gameplay_end: (e / US) as f64,
        },
        mgmt,
        flows,
        seconds,
        packet_count: cap.len() as u64,
    };
    Ok((cap, manifest))
}

/// Unrelated web and DNS traffic of one client, without any gaming.
pub fn gen_background(seed: u64, client_ip: Ipv4Addr, duration_s: u32) -> SyntheticCapture {
    let mut rng = sub_rng(seed, 5);
    let mut cap = SyntheticCapture::new();
    let mut ports = PortPool::new(&mut rng);
    let client = IpAddr::V4(client_ip);
    let names = ["www.example.com", "cdn.example.net", "mail.example.org", "api.example.com"];
    let mut t = T0_S * US;
    for s in 0..duration_s as i64 {
        let name = names[s as usize % names.len()];
        dns_pair(&mut cap, SocketAddr::new(client, ports.take()), t, 15_000);
        https_flow(&mut cap, &mut rng, SocketAddr::new(client, ports.take()), t + 20_000, 15_000, Some(name));
        t += US;
    }
    cap.finalize();
    cap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{CaptureReader, CaptureSource};
    use crate::qoe::Resolution;

    fn profile(kind: ProfileKind) -> SessionProfile {
        SessionProfile::new(kind, 60, Resolution::Hd, 20.0, 10, 11).unwrap()
    }

    #[test]
    fn desktop_manifest_lists_five_gameplay_flows() {
        let (_, m) = gen_session(&profile(ProfileKind::GfnDesktop)).unwrap();
        let mut roles: Vec<FlowRole> = m.flows.iter().map(|f| f.role).collect();
        roles.sort();
        assert_eq!(
            roles,
            vec![FlowRole::GameplayMgmt, FlowRole::DownVideo, FlowRole::DownAudio, FlowRole::UpAudio, FlowRole::UserInput]
        );
    }

    #[test]
    fn browser_and_xbox_use_a_combined_flow() {
        for kind in [ProfileKind::GfnBrowser, ProfileKind::XboxPcBrowser] {
            let (_, m) = gen_session(&profile(kind)).unwrap();
            let media: Vec<FlowRole> = m.flows.iter().map(|f| f.role).filter(|r| *r != FlowRole::GameplayMgmt).collect();
            assert_eq!(media, vec![FlowRole::CombinedMediaInput, FlowRole::StunWebrtc], "{kind}");
        }
        let (_, m) = gen_session(&profile(ProfileKind::XboxConsole)).unwrap();
        assert!(m.mgmt.is_none());
        assert!(m.flows.iter().all(|f| (1040..=1190).contains(&f.server_port)));
    }

    #[test]
    fn identical_seeds_give_identical_bytes() {
        let p = profile(ProfileKind::GfnBrowser);
        let a = gen_session(&p).unwrap().0.to_pcap_bytes(LinkType::RawIp);
        let b = gen_session(&p).unwrap().0.to_pcap_bytes(LinkType::RawIp);
        assert_eq!(a, b);
        let mut q = p.clone();
        q.seed += 1;
        assert_ne!(a, gen_session(&q).unwrap().0.to_pcap_bytes(LinkType::RawIp));
    }

    #[test]
    fn capture_round_trips_packet_count() {
        let (mut cap, m) = gen_session(&profile(ProfileKind::GfnMobile)).unwrap();
        for link in [LinkType::RawIp, LinkType::Ethernet] {
            let bytes = cap.to_pcap_bytes(link);
            let n = CaptureReader::new(std::io::Cursor::new(bytes)).unwrap().count();
            assert_eq!(n as u64, m.packet_count);
        }
        let r = crate::capture::read_capture(CaptureSource::Bytes(cap.to_pcap_bytes(LinkType::RawIp))).unwrap();
        assert_eq!(r.filter(|x| x.is_ok()).count() as u64, m.packet_count);
    }

    #[test]
    fn audio_envelopes() {
        let (cap, _) = gen_session(&profile(ProfileKind::GfnDesktop)).unwrap();
        let da = cap.flows().iter().position(|f| f.role == Some(FlowRole::DownAudio)).unwrap() as u32;
        let g = (T0_S + 5) * US;
        let second: Vec<&Ev> = cap.events.iter().filter(|e| e.flow == da && e.ts >= g + 2 * US && e.ts < g + 3 * US).collect();
        let down: Vec<&&Ev> = second.iter().filter(|e| !e.up).collect();
        assert_eq!(down.len(), 300);
        let bps = down.iter().map(|e| e.len as f64 * 8.0).sum::<f64>();
        assert!((bps - 37_000.0).abs() < 37_000.0 * 0.02, "{bps}");
        let up_bps: f64 = second.iter().filter(|e| e.up).map(|e| e.len as f64 * 8.0).sum();
        assert!((up_bps - 156.0).abs() <= 8.0, "{up_bps}");
    }
}
