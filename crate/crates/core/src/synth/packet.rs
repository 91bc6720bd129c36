use std::net::{IpAddr, SocketAddr};

use crate::capture::{LinkType, Proto};

/// TCP header fields of a rendered segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
}

/// Payload bytes, or a run of zeros of the given length.
#[derive(Clone, Copy, Debug)]
pub enum Payload<'a> {
    Zeros(u32),
    Bytes(&'a [u8]),
}

impl Payload<'_> {
    pub fn len(&self) -> usize {
        match self {
            Payload::Zeros(n) => *n as usize,
            Payload::Bytes(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WirePacket<'a> {
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub proto: Proto,
    pub tcp: Option<Segment>,
    pub payload: Payload<'a>,
}

const ETH_SRC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x01];
const ETH_DST: [u8; 6] = [0x02, 0, 0, 0, 0, 0x02];

fn checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header.chunks(2).map(|c| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Appends the link-layer frame of `p` to `out`. Transport checksums are
/// left zero; the IPv4 header checksum is filled in.
pub fn render_frame(out: &mut Vec<u8>, link: LinkType, p: &WirePacket, ip_id: u16) {
    let l4_len = match p.proto {
        Proto::Udp => 8,
        Proto::Tcp => 20,
    } + p.payload.len();
    if link == LinkType::Ethernet {
        out.extend_from_slice(&ETH_DST);
        out.extend_from_slice(&ETH_SRC);
        let ethertype: u16 = if p.src.is_ipv4() { 0x0800 } else { 0x86dd };
        out.extend_from_slice(&ethertype.to_be_bytes());
    }
    match (p.src.ip(), p.dst.ip()) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            let start = out.len();
            out.extend_from_slice(&[0x45, 0]);
            out.extend_from_slice(&((20 + l4_len) as u16).to_be_bytes());
            out.extend_from_slice(&ip_id.to_be_bytes());
            out.extend_from_slice(&[0x40, 0, 64, p.proto.ip_number(), 0, 0]);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
            let c = checksum(&out[start..start + 20]);
            out[start + 10..start + 12].copy_from_slice(&c.to_be_bytes());
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            out.extend_from_slice(&[0x60, 0, 0, 0]);
            out.extend_from_slice(&(l4_len as u16).to_be_bytes());
            out.extend_from_slice(&[p.proto.ip_number(), 64]);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
        }
        _ => panic!("mixed address families in one packet"),
    }
    out.extend_from_slice(&p.src.port().to_be_bytes());
    out.extend_from_slice(&p.dst.port().to_be_bytes());
    match (p.proto, p.tcp) {
        (Proto::Udp, _) => {
            out.extend_from_slice(&(l4_len as u16).to_be_bytes());
            out.extend_from_slice(&[0, 0]);
        }
        (Proto::Tcp, seg) => {
            let seg = seg.unwrap_or(Segment { seq: 0, ack: 0, flags: 0 });
            out.extend_from_slice(&seg.seq.to_be_bytes());
            out.extend_from_slice(&seg.ack.to_be_bytes());
            out.extend_from_slice(&[0x50, seg.flags]);
            out.extend_from_slice(&65535u16.to_be_bytes());
            out.extend_from_slice(&[0, 0, 0, 0]);
        }
    }
    match p.payload {
        Payload::Zeros(n) => out.resize(out.len() + n as usize, 0),
        Payload::Bytes(b) => out.extend_from_slice(b),
    }
}
