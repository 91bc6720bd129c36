use std::collections::{HashMap, VecDeque};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::Serialize;

use super::sni::{parse_client_hello, HelloParse};
use super::{FiveTuple, LinkType, PacketRecord, Proto, TcpFlags, TcpMeta};
use crate::Timestamp;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

const FRAGMENT_CAP: usize = 4096;
const HELLO_PENDING_CAP: usize = 65536;
/// ClientHellos spread beyond this many segments or bytes are treated as absent.
pub const HELLO_MAX_SEGMENTS: u8 = 3;
pub const HELLO_MAX_BYTES: usize = 8 * 1024;

/// Why a frame did not produce a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NotIp,
    StackedVlan,
    BadIpHeader,
    UnsupportedTransport,
    UnknownFragment,
    Truncated,
}

type FragKey = (IpAddr, IpAddr, u8, u32);

#[derive(Clone, Copy)]
struct FragInfo {
    src_port: u16,
    dst_port: u16,
    tcp: Option<TcpMeta>,
}

struct PendingHello {
    bytes: Vec<u8>,
    segments: u8,
}

/// Stateful frame parser. State is limited to the IP fragment heuristic and
/// ClientHello reassembly, both bounded.
pub struct PacketParser {
    fragments: HashMap<FragKey, FragInfo>,
    fragment_order: VecDeque<FragKey>,
    hellos: HashMap<FiveTuple, PendingHello>,
    hello_order: VecDeque<FiveTuple>,
}

impl Default for PacketParser {
    fn default() -> Self {
        Self::new()
    }
}

struct IpLayer<'a> {
    src: IpAddr,
    dst: IpAddr,
    proto: u8,
    /// Bytes of transport data declared by the IP header.
    declared_len: usize,
    /// Captured bytes of the transport data.
    data: &'a [u8],
    frag: Option<(u32, bool, bool)>, // (id, first fragment, more fragments)
}

impl PacketParser {
    pub fn new() -> Self {
        PacketParser {
            fragments: HashMap::new(),
            fragment_order: VecDeque::new(),
            hellos: HashMap::new(),
            hello_order: VecDeque::new(),
        }
    }

    pub fn parse(&mut self, frame: &[u8], link: LinkType, ts: Timestamp) -> Result<PacketRecord, SkipReason> {
        let ip = match link {
            LinkType::Ethernet => strip_ethernet(frame)?,
            LinkType::RawIp => frame,
        };
        let layer = match ip.first().map(|b| b >> 4) {
            Some(4) => parse_ipv4(ip)?,
            Some(6) => parse_ipv6(ip)?,
            Some(_) => return Err(SkipReason::NotIp),
            None => return Err(SkipReason::Truncated),
        };
        let proto = match layer.proto {
            6 => Proto::Tcp,
            17 => Proto::Udp,
            _ => return Err(SkipReason::UnsupportedTransport),
        };

        if let Some((id, false, _)) = layer.frag {
            let key = (layer.src, layer.dst, layer.proto, id);
            let info = *self.fragments.get(&key).ok_or(SkipReason::UnknownFragment)?;
            return Ok(PacketRecord {
                ts,
                five_tuple: FiveTuple {
                    src_ip: layer.src,
                    src_port: info.src_port,
                    dst_ip: layer.dst,
                    dst_port: info.dst_port,
                    proto,
                },
                payload_len: layer.declared_len as u32,
                tcp: info.tcp,
                server_name: None,
                is_fragment: true,
            });
        }

        let (src_port, dst_port, tcp, hdr_len) = match proto {
            Proto::Tcp => {
                let d = layer.data;
                if d.len() < 20 {
                    return Err(SkipReason::Truncated);
                }
                let header_len = ((d[12] >> 4) as usize) * 4;
                if header_len < 20 {
                    return Err(SkipReason::BadIpHeader);
                }
                if d.len() < header_len {
                    return Err(SkipReason::Truncated);
                }
                let meta = TcpMeta {
                    seq: u32::from_be_bytes([d[4], d[5], d[6], d[7]]),
                    ack: u32::from_be_bytes([d[8], d[9], d[10], d[11]]),
                    flags: TcpFlags(d[13]),
                    header_len: header_len as u8,
                };
                (u16::from_be_bytes([d[0], d[1]]), u16::from_be_bytes([d[2], d[3]]), Some(meta), header_len)
            }
            Proto::Udp => {
                let d = layer.data;
                if d.len() < 8 {
                    return Err(SkipReason::Truncated);
                }
                (u16::from_be_bytes([d[0], d[1]]), u16::from_be_bytes([d[2], d[3]]), None, 8)
            }
        };
        if layer.declared_len < hdr_len {
            return Err(SkipReason::Truncated);
        }
        let five_tuple = FiveTuple { src_ip: layer.src, src_port, dst_ip: layer.dst, dst_port, proto };

        if let Some((id, true, true)) = layer.frag {
            self.remember_fragment((layer.src, layer.dst, layer.proto, id), FragInfo { src_port, dst_port, tcp });
        }

        let payload_len = layer.declared_len - hdr_len;
        let server_name = if proto == Proto::Tcp && payload_len > 0 {
            let captured = &layer.data[hdr_len.min(layer.data.len())..];
            let captured = &captured[..captured.len().min(payload_len)];
            self.feed_hello(five_tuple, captured)
        } else {
            None
        };

        Ok(PacketRecord {
            ts,
            five_tuple,
            payload_len: payload_len as u32,
            tcp,
            server_name,
            is_fragment: false,
        })
    }

    fn remember_fragment(&mut self, key: FragKey, info: FragInfo) {
        if self.fragments.insert(key, info).is_none() {
            self.fragment_order.push_back(key);
            if self.fragment_order.len() > FRAGMENT_CAP {
                if let Some(old) = self.fragment_order.pop_front() {
                    self.fragments.remove(&old);
                }
            }
        }
    }

    fn feed_hello(&mut self, tuple: FiveTuple, payload: &[u8]) -> Option<String> {
        if let Some(pending) = self.hellos.get_mut(&tuple) {
            pending.segments += 1;
            let room = HELLO_MAX_BYTES.saturating_sub(pending.bytes.len());
            pending.bytes.extend_from_slice(&payload[..payload.len().min(room)]);
            let outcome = parse_client_hello(&pending.bytes);
            let exhausted = pending.segments >= HELLO_MAX_SEGMENTS || pending.bytes.len() >= HELLO_MAX_BYTES;
            return match outcome {
                HelloParse::Incomplete if !exhausted => None,
                HelloParse::Complete(name) => {
                    self.hellos.remove(&tuple);
                    name
                }
                _ => {
                    self.hellos.remove(&tuple);
                    None
                }
            };
        }
        // Only a segment opening a handshake record carrying a ClientHello starts reassembly.
        if payload.first() != Some(&0x16) || payload.get(5).is_some_and(|&t| t != 0x01) {
            return None;
        }
        let clipped = &payload[..payload.len().min(HELLO_MAX_BYTES)];
        match parse_client_hello(clipped) {
            HelloParse::Complete(name) => name,
            HelloParse::Incomplete if payload.len() < HELLO_MAX_BYTES => {
                self.hellos.insert(tuple, PendingHello { bytes: clipped.to_vec(), segments: 1 });
                self.hello_order.push_back(tuple);
                while self.hello_order.len() > HELLO_PENDING_CAP {
                    if let Some(old) = self.hello_order.pop_front() {
                        self.hellos.remove(&old);
                    }
                }
                None
            }
            _ => None,
        }
    }
}

fn strip_ethernet(frame: &[u8]) -> Result<&[u8], SkipReason> {
    if frame.len() < 14 {
        return Err(SkipReason::Truncated);
    }
    let mut ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    let mut offset = 14;
    if ethertype == ETHERTYPE_QINQ {
        return Err(SkipReason::StackedVlan);
    }
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < 18 {
            return Err(SkipReason::Truncated);
        }
        ethertype = u16::from_be_bytes([frame[16], frame[17]]);
        offset = 18;
        if ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
            return Err(SkipReason::StackedVlan);
        }
    }
    match ethertype {
        ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => Ok(&frame[offset..]),
        _ => Err(SkipReason::NotIp),
    }
}

fn parse_ipv4(ip: &[u8]) -> Result<IpLayer<'_>, SkipReason> {
    if ip.len() < 20 {
        return Err(SkipReason::Truncated);
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 {
        return Err(SkipReason::BadIpHeader);
    }
    if ip.len() < ihl {
        return Err(SkipReason::Truncated);
    }
    let total = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    // A zero total length shows up on segmentation-offloaded captures.
    let total = if total == 0 { ip.len() } else { total };
    if total < ihl {
        return Err(SkipReason::BadIpHeader);
    }
    let id = u16::from_be_bytes([ip[4], ip[5]]) as u32;
    let flags_off = u16::from_be_bytes([ip[6], ip[7]]);
    let more = flags_off & 0x2000 != 0;
    let offset = flags_off & 0x1fff;
    let frag = (more || offset != 0).then_some((id, offset == 0, more));
    let src = IpAddr::V4(Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]));
    let end = total.min(ip.len());
    Ok(IpLayer { src, dst, proto: ip[9], declared_len: total - ihl, data: &ip[ihl..end], frag })
}

fn parse_ipv6(ip: &[u8]) -> Result<IpLayer<'_>, SkipReason> {
    if ip.len() < 40 {
        return Err(SkipReason::Truncated);
    }
    let payload_len = u16::from_be_bytes([ip[4], ip[5]]) as usize;
    let payload_len = if payload_len == 0 { ip.len() - 40 } else { payload_len };
    let mut next = ip[6];
    let src = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&ip[8..24]).unwrap()));
    let dst = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&ip[24..40]).unwrap()));
    let mut pos = 40;
    let mut consumed = 0;
    let mut frag = None;
    loop {
        match next {
            0 | 43 | 60 | 51 => {
                if ip.len() < pos + 2 {
                    return Err(SkipReason::Truncated);
                }
                let len = if next == 51 { (ip[pos + 1] as usize + 2) * 4 } else { (ip[pos + 1] as usize + 1) * 8 };
                next = ip[pos];
                pos += len;
                consumed += len;
            }
            44 => {
                if ip.len() < pos + 8 {
                    return Err(SkipReason::Truncated);
                }
                let off_flags = u16::from_be_bytes([ip[pos + 2], ip[pos + 3]]);
                let id = u32::from_be_bytes([ip[pos + 4], ip[pos + 5], ip[pos + 6], ip[pos + 7]]);
                let offset = off_flags >> 3;
                let more = off_flags & 1 != 0;
                if more || offset != 0 {
                    frag = Some((id, offset == 0, more));
                }
                next = ip[pos];
                pos += 8;
                consumed += 8;
            }
            _ => break,
        }
        if consumed > payload_len {
            return Err(SkipReason::BadIpHeader);
        }
    }
    if ip.len() < pos {
        return Err(SkipReason::Truncated);
    }
    let end = (40 + payload_len).min(ip.len()).max(pos);
    Ok(IpLayer { src, dst, proto: next, declared_len: payload_len - consumed, data: &ip[pos..end], frag })
}
