use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sub_rng, SynthError};
use crate::detect::{Os, PlatformId, SetupType};
use crate::qoe::Resolution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    GfnDesktop,
    GfnMobile,
    GfnBrowser,
    XboxConsole,
    XboxPcBrowser,
    XboxMobileBrowser,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 6] = [
        ProfileKind::GfnDesktop,
        ProfileKind::GfnMobile,
        ProfileKind::GfnBrowser,
        ProfileKind::XboxConsole,
        ProfileKind::XboxPcBrowser,
        ProfileKind::XboxMobileBrowser,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::GfnDesktop => "gfn-desktop",
            ProfileKind::GfnMobile => "gfn-mobile",
            ProfileKind::GfnBrowser => "gfn-browser",
            ProfileKind::XboxConsole => "xbox-console",
            ProfileKind::XboxPcBrowser => "xbox-pc-browser",
            ProfileKind::XboxMobileBrowser => "xbox-mobile-browser",
        }
    }

    pub fn platform(self) -> PlatformId {
        match self {
            ProfileKind::GfnDesktop | ProfileKind::GfnMobile | ProfileKind::GfnBrowser => PlatformId::Gfn,
            _ => PlatformId::XboxCloud,
        }
    }

    pub fn setup(self) -> SetupType {
        match self {
            ProfileKind::GfnDesktop => SetupType::DesktopApp,
            ProfileKind::GfnMobile => SetupType::MobileApp,
            ProfileKind::GfnBrowser => SetupType::Browser,
            ProfileKind::XboxConsole => SetupType::HardwareConsole,
            ProfileKind::XboxPcBrowser => SetupType::PcBrowser,
            ProfileKind::XboxMobileBrowser => SetupType::MobileBrowser,
        }
    }

    /// Client systems this setup runs on; empty where no handshake
    /// signature applies.
    pub fn allowed_os(self) -> &'static [Os] {
        match self {
            ProfileKind::GfnDesktop => &[Os::Windows, Os::MacOs],
            ProfileKind::GfnMobile => &[Os::Android],
            ProfileKind::GfnBrowser => &[Os::Windows, Os::MacOs, Os::Ios],
            _ => &[],
        }
    }

    /// Separate video, audio and input flows.
    pub fn console_layout(self) -> bool {
        matches!(self, ProfileKind::GfnDesktop | ProfileKind::GfnMobile)
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileKind {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProfileKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SynthError::InvalidProfile(format!("unknown profile `{s}`")))
    }
}

/// Peak-bitrate band of a resolution at a nominal frame rate, in Mbit/s,
/// with the lower bound exclusive for SD.
pub fn band_range(fps: u32, res: Resolution) -> Option<(f64, f64)> {
    match (fps, res) {
        (60, Resolution::Fhd) => Some((23.0, 35.0)),
        (60, Resolution::Hd) => Some((15.0, 21.0)),
        (60, Resolution::Sd) => Some((2.0, 13.0)),
        (30, Resolution::Fhd) => Some((15.0, 22.0)),
        (30, Resolution::Hd) => Some((9.0, 13.0)),
        (30, Resolution::Sd) => Some((2.0, 8.0)),
        _ => None,
    }
}

/// Range the generator draws steady bitrates from. It sits inside the
/// band, clear of neighbouring edges, and above the 5 Mbit/s video
/// criterion so SD streams still read as video.
pub fn target_range(fps: u32, res: Resolution) -> Option<(f64, f64)> {
    match (fps, res) {
        (60, Resolution::Fhd) => Some((26.0, 32.0)),
        (60, Resolution::Hd) => Some((16.5, 19.5)),
        (60, Resolution::Sd) => Some((7.0, 11.0)),
        (30, Resolution::Fhd) => Some((17.0, 20.0)),
        (30, Resolution::Hd) => Some((10.0, 12.0)),
        (30, Resolution::Sd) => Some((6.0, 7.0)),
        _ => None,
    }
}

pub fn in_band(fps: u32, res: Resolution, mbps: f64) -> bool {
    match (band_range(fps, res), res) {
        (Some((lo, hi)), Resolution::Sd) => mbps > lo && mbps <= hi,
        (Some((lo, hi)), _) => mbps >= lo && mbps <= hi,
        (None, _) => false,
    }
}

/// Everything needed to generate one synthetic session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionProfile {
    pub kind: ProfileKind,
    pub os: Option<Os>,
    /// (offset from gameplay start in whole seconds, fps).
    pub fps_schedule: Vec<(u32, u32)>,
    /// (offset from gameplay start in whole seconds, band).
    pub resolution_schedule: Vec<(u32, Resolution)>,
    /// Overrides the drawn steady bitrate; must lie in every scheduled band.
    pub bitrate_mbps: Option<f64>,
    pub rtt_ms: f64,
    /// Gameplay length in seconds.
    pub duration_s: u32,
    /// Platform phase before gameplay, in seconds.
    pub platform_s: u32,
    pub seed: u64,
    pub client_ip: Ipv4Addr,
    pub server_ip: Ipv4Addr,
    /// Send every ClientHello without a server name.
    pub strip_sni: bool,
}

pub const MIN_DURATION_S: u32 = 5;

impl SessionProfile {
    /// Constant-rate profile; the OS, when the setup needs one, and the
    /// documentation-range addresses are drawn from the seed.
    pub fn new(kind: ProfileKind, fps: u32, res: Resolution, rtt_ms: f64, duration_s: u32, seed: u64) -> Result<Self, SynthError> {
        let mut rng = sub_rng(seed, 0);
        let os = match kind.allowed_os() {
            [] => None,
            list => Some(list[rng.random_range(0..list.len())]),
        };
        let p = SessionProfile {
            kind,
            os,
            fps_schedule: vec![(0, fps)],
            resolution_schedule: vec![(0, res)],
            bitrate_mbps: None,
            rtt_ms,
            duration_s,
            platform_s: 5,
            seed,
            client_ip: Ipv4Addr::new(192, 0, 2, rng.random_range(10..=250)),
            server_ip: Ipv4Addr::new(203, 0, 113, rng.random_range(1..=254)),
            strip_sni: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn platform_id(&self) -> PlatformId {
        self.kind.platform()
    }

    pub fn setup(&self) -> SetupType {
        self.kind.setup()
    }

    pub fn fps_at(&self, sec: u32) -> u32 {
        self.fps_schedule.iter().rev().find(|(t, _)| *t <= sec).map_or(self.fps_schedule[0].1, |e| e.1)
    }

    pub fn resolution_at(&self, sec: u32) -> Resolution {
        self.resolution_schedule.iter().rev().find(|(t, _)| *t <= sec).map_or(self.resolution_schedule[0].1, |e| e.1)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidProfile(m));
        if self.duration_s < MIN_DURATION_S {
            return bad(format!("duration must be at least {MIN_DURATION_S} s"));
        }
        if self.platform_s < 4 {
            return bad("platform phase must be at least 4 s".into());
        }
        if !(self.rtt_ms > 0.0 && self.rtt_ms <= 1000.0) {
            return bad(format!("rtt {} ms outside (0, 1000]", self.rtt_ms));
        }
        for (name, times) in [
            ("fps", self.fps_schedule.iter().map(|e| e.0).collect::<Vec<_>>()),
            ("resolution", self.resolution_schedule.iter().map(|e| e.0).collect()),
        ] {
            if times.first() != Some(&0) || times.windows(2).any(|w| w[0] >= w[1]) || times.iter().any(|&t| t >= self.duration_s) {
                return bad(format!("{name} schedule must start at 0 and increase within the duration"));
            }
        }
        for sec in 0..self.duration_s {
            let (fps, res) = (self.fps_at(sec), self.resolution_at(sec));
            if band_range(fps, res).is_none() {
                return bad(format!("{fps} fps with {res} is not a supported combination"));
            }
            if let Some(b) = self.bitrate_mbps {
                if !in_band(fps, res, b) {
                    return Err(SynthError::BandMismatch { fps, resolution: res, mbps: b });
                }
            }
        }
        match self.os {
            Some(os) if !self.kind.allowed_os().contains(&os) => bad(format!("{} cannot run on {os}", self.kind)),
            None if !self.kind.allowed_os().is_empty() => bad(format!("{} needs an OS", self.kind)),
            _ => Ok(()),
        }
    }
}
