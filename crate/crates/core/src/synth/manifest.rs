use std::fs;
use std::io;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::profile::ProfileKind;
use crate::capture::Proto;
use crate::classify::FlowRole;
use crate::detect::{Os, PlatformId, SetupClass, SetupType};
use crate::qoe::Resolution;

pub const MANIFEST_SCHEMA: &str = "cgl-manifest/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub platform_start: f64,
    pub gameplay_start: f64,
    pub gameplay_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgmtTruth {
    pub server_port: u16,
    pub class: SetupClass,
    pub os: Os,
    pub upstream_sizes: Vec<u32>,
    pub downstream_sizes: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTruth {
    pub proto: Proto,
    pub client_ip: IpAddr,
    pub client_port: u16,
    pub server_ip: IpAddr,
    pub server_port: u16,
    pub role: FlowRole,
}

/// True state of one gameplay second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondTruth {
    /// Start of the second, epoch seconds.
    pub ts: f64,
    pub fps: u32,
    pub bitrate_mbps: f64,
    pub resolution: Resolution,
}

/// What a synthetic capture contains, written next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub schema: String,
    pub profile: ProfileKind,
    pub platform: PlatformId,
    pub setup: SetupType,
    pub os: Option<Os>,
    pub seed: u64,
    pub rtt_ms: f64,
    pub client_ip: IpAddr,
    pub server_ip: IpAddr,
    pub strip_sni: bool,
    pub heartbeat_period_s: f64,
    pub timeline: Timeline,
    pub mgmt: Option<MgmtTruth>,
    pub flows: Vec<FlowTruth>,
    pub seconds: Vec<SecondTruth>,
    pub packet_count: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported manifest schema `{0}` (expected {MANIFEST_SCHEMA})")]
    Schema(String),
}

impl GroundTruthManifest {
    /// `<dir>/<stem>.manifest.json` for a capture at `<dir>/<stem>.pcap`.
    pub fn path_for(capture: &Path) -> PathBuf {
        let stem = capture.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        capture.with_file_name(format!("{stem}.manifest.json"))
    }

    pub fn role_of(&self, client_port: u16, server_ip: IpAddr, server_port: u16, proto: Proto) -> Option<FlowRole> {
        self.flows
            .iter()
            .find(|f| f.client_port == client_port && f.server_ip == server_ip && f.server_port == server_port && f.proto == proto)
            .map(|f| f.role)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ManifestError> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        match v.get("schema").and_then(|s| s.as_str()) {
            Some(MANIFEST_SCHEMA) => Ok(serde_json::from_value(v)?),
            other => Err(ManifestError::Schema(other.unwrap_or("").to_string())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
