//! Packet ingest: classic PCAP files, link/network/transport parsing and
//! TLS ClientHello server names.

mod parse;
mod pcap;
mod sni;

use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::Timestamp;

pub use parse::{PacketParser, SkipReason};
pub use pcap::{
    read_capture, CaptureError, CaptureReader, CaptureSource, CaptureStats, LinkType, TsResolution,
    PCAP_MAGIC_MICROS, PCAP_MAGIC_NANOS,
};
pub use sni::{extract_sni, parse_client_hello, HelloParse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Udp,
}

impl Proto {
    pub fn ip_number(self) -> u8 {
        match self {
            Proto::Tcp => 6,
            Proto::Udp => 17,
        }
    }
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proto::Tcp => "TCP",
            Proto::Udp => "UDP",
        })
    }
}

/// Direction of a packet relative to the client endpoint of its flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upstream,
    Downstream,
}

/// Addresses as they appear on the wire (source first).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FiveTuple {
    pub src_ip: IpAddr,
    pub src_port: u16,
    pub dst_ip: IpAddr,
    pub dst_port: u16,
    pub proto: Proto,
}

impl FiveTuple {
    pub fn reversed(&self) -> FiveTuple {
        FiveTuple {
            src_ip: self.dst_ip,
            src_port: self.dst_port,
            dst_ip: self.src_ip,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;

    pub fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub fn is_syn(self) -> bool {
        self.has(Self::SYN)
    }
}

impl fmt::Debug for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [(Self::SYN, "SYN"), (Self::ACK, "ACK"), (Self::FIN, "FIN"), (Self::RST, "RST"), (Self::PSH, "PSH")];
        let set: Vec<&str> = names.iter().filter(|(b, _)| self.has(*b)).map(|(_, n)| *n).collect();
        write!(f, "[{}]", set.join("|"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TcpMeta {
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    /// TCP header length in bytes (data offset × 4).
    pub header_len: u8,
}

/// One parsed TCP or UDP packet.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketRecord {
    pub ts: Timestamp,
    pub five_tuple: FiveTuple,
    /// Transport payload bytes as declared by the IP header, so snap-length
    /// truncation does not shrink it.
    pub payload_len: u32,
    /// Present iff the transport protocol is TCP.
    pub tcp: Option<TcpMeta>,
    /// Server name recovered from a TLS ClientHello that completed on this packet.
    pub server_name: Option<String>,
    /// Non-initial IP fragment attributed to its flow by fragment id.
    pub is_fragment: bool,
}

impl PacketRecord {
    pub fn proto(&self) -> Proto {
        self.five_tuple.proto
    }
}
