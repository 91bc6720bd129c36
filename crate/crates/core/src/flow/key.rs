use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::capture::{Direction, FiveTuple, PacketRecord, Proto};

/// Flow identity oriented client → server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub client_ip: IpAddr,
    pub client_port: u16,
    pub server_ip: IpAddr,
    pub server_port: u16,
    pub proto: Proto,
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}:{} -> {}:{}",
            self.proto, self.client_ip, self.client_port, self.server_ip, self.server_port
        )
    }
}

/// The networks whose hosts are treated as clients.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientNets(Vec<IpNet>);

#[derive(Debug, thiserror::Error)]
#[error("invalid CIDR `{0}`")]
pub struct CidrError(String);

impl FromStr for ClientNets {
    type Err = CidrError;

    /// Comma-separated CIDRs; a bare address is a host route.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut nets = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let net = part
                .parse::<IpNet>()
                .or_else(|_| part.parse::<IpAddr>().map(IpNet::from))
                .map_err(|_| CidrError(part.to_string()))?;
            nets.push(net);
        }
        Ok(ClientNets(nets))
    }
}

impl ClientNets {
    pub fn new(nets: Vec<IpNet>) -> Self {
        ClientNets(nets)
    }

    pub fn contains(&self, ip: &IpAddr) -> bool {
        self.0.iter().any(|n| n.contains(ip))
    }

    pub fn nets(&self) -> &[IpNet] {
        &self.0
    }

    /// Orients a wire tuple. `ambiguous` is set when not exactly one endpoint
    /// is inside the client networks; the lower (address, port) endpoint is
    /// then taken as the client.
    pub fn orient(&self, t: &FiveTuple) -> Orientation {
        let src_in = self.contains(&t.src_ip);
        let dst_in = self.contains(&t.dst_ip);
        let (src_is_client, ambiguous) = match (src_in, dst_in) {
            (true, false) => (true, false),
            (false, true) => (false, false),
            _ => ((t.src_ip, t.src_port) <= (t.dst_ip, t.dst_port), true),
        };
        let key = if src_is_client {
            FlowKey { client_ip: t.src_ip, client_port: t.src_port, server_ip: t.dst_ip, server_port: t.dst_port, proto: t.proto }
        } else {
            FlowKey { client_ip: t.dst_ip, client_port: t.dst_port, server_ip: t.src_ip, server_port: t.src_port, proto: t.proto }
        };
        let direction = if src_is_client { Direction::Upstream } else { Direction::Downstream };
        Orientation { key, direction, ambiguous }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Orientation {
    pub key: FlowKey,
    pub direction: Direction,
    pub ambiguous: bool,
}

/// Canonical flow key of a packet and its direction.
pub fn canonical_key(pkt: &PacketRecord, nets: &ClientNets) -> (FlowKey, Direction) {
    let o = nets.orient(&pkt.five_tuple);
    (o.key, o.direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Timestamp;

    fn pkt(src: &str, sport: u16, dst: &str, dport: u16) -> PacketRecord {
        PacketRecord {
            ts: Timestamp::from_secs(1),
            five_tuple: FiveTuple {
                src_ip: src.parse().unwrap(),
                src_port: sport,
                dst_ip: dst.parse().unwrap(),
                dst_port: dport,
                proto: Proto::Udp,
            },
            payload_len: 10,
            tcp: None,
            server_name: None,
            is_fragment: false,
        }
    }

    #[test]
    fn client_side_is_upstream() {
        let nets: ClientNets = "10.0.0.0/8".parse().unwrap();
        let (key, dir) = canonical_key(&pkt("10.0.0.5", 50000, "203.0.113.7", 322), &nets);
        assert_eq!(key.client_ip, "10.0.0.5".parse::<IpAddr>().unwrap());
        assert_eq!(key.server_port, 322);
        assert_eq!(dir, Direction::Upstream);

        let (rkey, rdir) = canonical_key(&pkt("203.0.113.7", 322, "10.0.0.5", 50000), &nets);
        assert_eq!(rkey, key);
        assert_eq!(rdir, Direction::Downstream);
    }

    #[test]
    fn neither_side_known_picks_lower_endpoint() {
        let nets: ClientNets = "10.0.0.0/8".parse().unwrap();
        let o = nets.orient(&pkt("198.51.100.9", 443, "198.51.100.2", 61000).five_tuple);
        assert!(o.ambiguous);
        assert_eq!(o.key.client_ip, "198.51.100.2".parse::<IpAddr>().unwrap());
        assert_eq!(o.direction, Direction::Downstream);
    }

    #[test]
    fn parses_lists_and_bare_hosts() {
        let nets: ClientNets = "192.0.2.0/24, 2001:db8::/32,10.1.2.3".parse().unwrap();
        assert_eq!(nets.nets().len(), 3);
        assert!(nets.contains(&"10.1.2.3".parse().unwrap()));
        assert!(!nets.contains(&"10.1.2.4".parse().unwrap()));
        assert!("10.0.0.0/33".parse::<ClientNets>().is_err());
    }
}
