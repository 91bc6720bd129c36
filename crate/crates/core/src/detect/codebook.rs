use std::collections::BTreeMap;
use std::fmt;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ClassifierCriteria;

/// Codebook shipped with the crate.
pub const DEFAULT_CODEBOOK: &str = include_str!("../../data/codebook.toml");

const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformId {
    Gfn,
    XboxCloud,
}

impl PlatformId {
    pub fn as_str(self) -> &'static str {
        match self {
            PlatformId::Gfn => "gfn",
            PlatformId::XboxCloud => "xbox_cloud",
        }
    }

    pub fn setups(self) -> [SetupType; 3] {
        match self {
            PlatformId::Gfn => [SetupType::DesktopApp, SetupType::MobileApp, SetupType::Browser],
            PlatformId::XboxCloud => [SetupType::HardwareConsole, SetupType::PcBrowser, SetupType::MobileBrowser],
        }
    }
}

impl fmt::Display for PlatformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupType {
    DesktopApp,
    MobileApp,
    Browser,
    HardwareConsole,
    PcBrowser,
    MobileBrowser,
    Unknown,
}

impl SetupType {
    pub const ALL: [SetupType; 7] = [
        SetupType::DesktopApp,
        SetupType::MobileApp,
        SetupType::Browser,
        SetupType::HardwareConsole,
        SetupType::PcBrowser,
        SetupType::MobileBrowser,
        SetupType::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SetupType::DesktopApp => "desktop_app",
            SetupType::MobileApp => "mobile_app",
            SetupType::Browser => "browser",
            SetupType::HardwareConsole => "hardware_console",
            SetupType::PcBrowser => "pc_browser",
            SetupType::MobileBrowser => "mobile_browser",
            SetupType::Unknown => "unknown",
        }
    }

    pub fn platform(self) -> Option<PlatformId> {
        match self {
            SetupType::DesktopApp | SetupType::MobileApp | SetupType::Browser => Some(PlatformId::Gfn),
            SetupType::HardwareConsole | SetupType::PcBrowser | SetupType::MobileBrowser => Some(PlatformId::XboxCloud),
            SetupType::Unknown => None,
        }
    }
}

impl fmt::Display for SetupType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetupType {
    type Err = CodebookError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SetupType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CodebookError::Invalid(format!("unknown setup `{s}`")))
    }
}

/// Software agent class as told by the management port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupClass {
    App,
    Browser,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Os {
    Windows,
    #[serde(rename = "macos")]
    MacOs,
    Android,
    #[serde(rename = "ios")]
    Ios,
}

impl Os {
    pub fn as_str(self) -> &'static str {
        match self {
            Os::Windows => "windows",
            Os::MacOs => "macos",
            Os::Android => "android",
            Os::Ios => "ios",
        }
    }
}

impl fmt::Display for Os {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Os {
    type Err = CodebookError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Os::Windows, Os::MacOs, Os::Android, Os::Ios]
            .into_iter()
            .find(|o| o.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CodebookError::Invalid(format!("unknown OS `{s}`")))
    }
}

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("cannot read codebook {path}")]
    Io { path: String, source: std::io::Error },
    #[error("codebook syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("codebook: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum LabelPat {
    Any,
    Exact(String),
    Glob(Vec<String>),
}

impl LabelPat {
    fn matches(&self, label: &str) -> bool {
        match self {
            LabelPat::Any => true,
            LabelPat::Exact(s) => s == label,
            LabelPat::Glob(parts) => glob(parts, label),
        }
    }
}

/// `*`-separated literal parts matched in order; `*` spans any substring.
fn glob(parts: &[String], s: &str) -> bool {
    let (first, rest) = parts.split_first().expect("glob has parts");
    let Some(mut tail) = s.strip_prefix(first.as_str()) else { return false };
    let Some((last, mid)) = rest.split_last() else { return tail.is_empty() };
    for p in mid {
        match tail.find(p.as_str()) {
            Some(i) => tail = &tail[i + p.len()..],
            None => return false,
        }
    }
    tail.len() >= last.len() && tail.ends_with(last.as_str())
}

/// Domain wildcard over dot-separated labels.
///
/// A `*` label matches exactly one label; as the last label it matches one
/// or more. A `*` inside a label globs within that label only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainPattern {
    text: String,
    labels: Vec<LabelPat>,
    open_tail: bool,
}

fn check_label(label: &str, text: &str, allow_star: bool) -> Result<(), CodebookError> {
    let ok = !label.is_empty()
        && label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_' || (allow_star && b == b'*'));
    if ok {
        Ok(())
    } else {
        Err(CodebookError::Invalid(format!("bad label `{label}` in pattern `{text}` (lowercase, digits, - and _ only)")))
    }
}

impl FromStr for DomainPattern {
    type Err = CodebookError;
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut labels = Vec::new();
        for label in text.split('.') {
            check_label(label, text, true)?;
            labels.push(if label == "*" {
                LabelPat::Any
            } else if label.contains('*') {
                LabelPat::Glob(label.split('*').map(str::to_string).collect())
            } else {
                LabelPat::Exact(label.to_string())
            });
        }
        let open_tail = labels.last() == Some(&LabelPat::Any);
        Ok(DomainPattern { text: text.to_string(), labels, open_tail })
    }
}

impl DomainPattern {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    /// `name` must already be lowercase.
    pub fn matches(&self, name: &str) -> bool {
        let n = self.labels.len();
        let count = name.split('.').count();
        if (self.open_tail && count < n) || (!self.open_tail && count != n) {
            return false;
        }
        name.split('.').zip(&self.labels).all(|(l, p)| p.matches(l))
    }
}

impl fmt::Display for DomainPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Server-name template with one `{ip}` label carrying a dashed IPv4 address.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameplayPattern {
    text: String,
    ip_label: usize,
    labels: Vec<String>,
}

impl FromStr for GameplayPattern {
    type Err = CodebookError;
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let labels: Vec<String> = text.split('.').map(str::to_string).collect();
        let mut ip_label = None;
        for (i, l) in labels.iter().enumerate() {
            if l == "{ip}" {
                if ip_label.replace(i).is_some() {
                    return Err(CodebookError::Invalid(format!("`{text}` has more than one {{ip}} label")));
                }
            } else {
                check_label(l, text, false)?;
            }
        }
        let ip_label = ip_label.ok_or_else(|| CodebookError::Invalid(format!("`{text}` lacks an {{ip}} label")))?;
        Ok(GameplayPattern { text: text.to_string(), ip_label, labels })
    }
}

impl GameplayPattern {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    /// Embedded server address when `name` instantiates the template.
    pub fn decode(&self, name: &str) -> Option<IpAddr> {
        let parts: Vec<&str> = name.split('.').collect();
        if parts.len() != self.labels.len() {
            return None;
        }
        let mut ip = None;
        for (i, (p, l)) in parts.iter().zip(&self.labels).enumerate() {
            if i == self.ip_label {
                ip = decode_dashed_v4(p);
                ip?;
            } else if p != l {
                return None;
            }
        }
        ip.map(IpAddr::V4)
    }

    pub fn instantiate(&self, ip: Ipv4Addr) -> String {
        let o = ip.octets();
        self.text.replace("{ip}", &format!("{}-{}-{}-{}", o[0], o[1], o[2], o[3]))
    }
}

fn decode_dashed_v4(label: &str) -> Option<Ipv4Addr> {
    let mut octets = [0u8; 4];
    let mut n = 0;
    for part in label.split('-') {
        if n == 4 || part.is_empty() || part.len() > 3 || !part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        octets[n] = part.parse().ok()?;
        n += 1;
    }
    (n == 4).then(|| Ipv4Addr::from(octets))
}

/// Payload sizes right after the TCP handshake of a management flow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupSignature {
    pub os: Os,
    pub dst_ports: Vec<u16>,
    pub upstream_sizes: Vec<u32>,
    pub downstream_sizes: Vec<u32>,
}

impl SetupSignature {
    /// Observed sizes begin with this signature's sizes.
    pub fn matches(&self, up: &[u32], down: &[u32], dst_port: u16) -> bool {
        self.dst_ports.contains(&dst_port) && up.starts_with(&self.upstream_sizes) && down.starts_with(&self.downstream_sizes)
    }
}

/// First signature whose sizes prefix the observed ones, with the agent
/// class of the port. Empty upstream observations never match.
pub fn match_setup_signature(
    signatures: &[SetupSignature],
    mgmt_ports: &[(u16, SetupClass)],
    up: &[u32],
    down: &[u32],
    dst_port: u16,
) -> Option<(Os, SetupClass)> {
    if up.is_empty() {
        return None;
    }
    let class = mgmt_ports.iter().find(|(p, _)| *p == dst_port)?.1;
    signatures.iter().find(|s| s.matches(up, down, dst_port)).map(|s| (s.os, class))
}

/// Validated codebook of one platform.
#[derive(Clone, Debug)]
pub struct ServiceCodebook {
    pub platform_id: PlatformId,
    pub core_services: Vec<DomainPattern>,
    pub setup_tables: BTreeMap<SetupType, Vec<DomainPattern>>,
    pub gameplay_name_pattern: Option<GameplayPattern>,
    pub mgmt_ports: Vec<(u16, SetupClass)>,
    /// Server-side UDP ports of gameplay flows, for platforms without a
    /// named management flow.
    pub gameplay_udp_ports: Option<(u16, u16)>,
    pub signatures: Vec<SetupSignature>,
}

impl ServiceCodebook {
    /// Patterns of `setup` that are absent from at least one other table.
    pub fn discriminating(&self, setup: SetupType) -> Vec<&DomainPattern> {
        let Some(table) = self.setup_tables.get(&setup) else { return Vec::new() };
        table
            .iter()
            .filter(|p| !self.setup_tables.values().all(|t| t.iter().any(|q| q.as_str() == p.as_str())))
            .collect()
    }

    pub fn mgmt_class(&self, port: u16) -> Option<SetupClass> {
        self.mgmt_ports.iter().find(|(p, _)| *p == port).map(|(_, c)| *c)
    }

    pub fn match_setup_signature(&self, up: &[u32], down: &[u32], dst_port: u16) -> Option<(Os, SetupClass)> {
        match_setup_signature(&self.signatures, &self.mgmt_ports, up, down, dst_port)
    }

    /// Whether `name` matches any core or setup pattern.
    pub fn knows(&self, name: &str) -> bool {
        self.core_services.iter().chain(self.setup_tables.values().flatten()).any(|p| p.matches(name))
    }
}

/// All platforms plus classifier criteria.
#[derive(Clone, Debug)]
pub struct Codebook {
    pub platforms: Vec<ServiceCodebook>,
    pub criteria: ClassifierCriteria,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCodebook {
    schema_version: u32,
    #[serde(default)]
    criteria: ClassifierCriteria,
    #[serde(rename = "platform")]
    platforms: Vec<RawPlatform>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlatform {
    id: PlatformId,
    core: Vec<String>,
    setups: BTreeMap<SetupType, Vec<String>>,
    gameplay_pattern: Option<String>,
    #[serde(default)]
    mgmt_ports: Vec<RawPort>,
    gameplay_udp_ports: Option<[u16; 2]>,
    #[serde(default)]
    signatures: Vec<RawSignature>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPort {
    port: u16,
    class: SetupClass,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignature {
    os: Os,
    ports: Vec<u16>,
    up: Vec<u32>,
    down: Vec<u32>,
}

fn patterns(list: &[String]) -> Result<Vec<DomainPattern>, CodebookError> {
    list.iter().map(|s| s.parse()).collect()
}

impl FromStr for Codebook {
    type Err = CodebookError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw: RawCodebook = toml::from_str(s)?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(CodebookError::Invalid(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                raw.schema_version
            )));
        }
        raw.criteria.validate().map_err(|e| CodebookError::Invalid(e.to_string()))?;
        let mut platforms = Vec::new();
        for p in raw.platforms {
            if p.core.is_empty() {
                return Err(CodebookError::Invalid(format!("{}: core list is empty", p.id)));
            }
            if platforms.iter().any(|q: &ServiceCodebook| q.platform_id == p.id) {
                return Err(CodebookError::Invalid(format!("{}: platform listed twice", p.id)));
            }
            let mut setup_tables = BTreeMap::new();
            for (setup, list) in &p.setups {
                if setup.platform() != Some(p.id) {
                    return Err(CodebookError::Invalid(format!("{}: setup {setup} belongs to another platform", p.id)));
                }
                setup_tables.insert(*setup, patterns(list)?);
            }
            for setup in p.id.setups() {
                if !setup_tables.contains_key(&setup) {
                    return Err(CodebookError::Invalid(format!("{}: no table for setup {setup}", p.id)));
                }
            }
            let signatures: Vec<SetupSignature> = p
                .signatures
                .into_iter()
                .map(|s| SetupSignature { os: s.os, dst_ports: s.ports, upstream_sizes: s.up, downstream_sizes: s.down })
                .collect();
            for s in &signatures {
                if s.upstream_sizes.is_empty() || s.upstream_sizes.iter().chain(&s.downstream_sizes).any(|&b| b == 0) {
                    return Err(CodebookError::Invalid(format!("{}: signature for {} needs positive sizes and an upstream entry", p.id, s.os)));
                }
            }
            let gameplay_udp_ports = match p.gameplay_udp_ports {
                Some([lo, hi]) if lo > hi => {
                    return Err(CodebookError::Invalid(format!("{}: gameplay_udp_ports {lo} > {hi}", p.id)))
                }
                r => r.map(|[lo, hi]| (lo, hi)),
            };
            platforms.push(ServiceCodebook {
                platform_id: p.id,
                core_services: patterns(&p.core)?,
                setup_tables,
                gameplay_name_pattern: p.gameplay_pattern.as_deref().map(str::parse).transpose()?,
                mgmt_ports: p.mgmt_ports.into_iter().map(|r| (r.port, r.class)).collect(),
                gameplay_udp_ports,
                signatures,
            });
        }
        Ok(Codebook { platforms, criteria: raw.criteria })
    }
}

impl Default for Codebook {
    fn default() -> Self {
        DEFAULT_CODEBOOK.parse().expect("bundled codebook is valid")
    }
}

impl Codebook {
    pub fn load(path: &Path) -> Result<Codebook, CodebookError> {
        let text = std::fs::read_to_string(path).map_err(|source| CodebookError::Io { path: path.display().to_string(), source })?;
        text.parse()
    }

    pub fn platform(&self, id: PlatformId) -> Option<&ServiceCodebook> {
        self.platforms.iter().find(|p| p.platform_id == id)
    }
}
