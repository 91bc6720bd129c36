//! Gameplay flow roles from volumetric profiles.
//!
//! A candidate flow is judged once, on the per-field median of its first
//! three closed windows, which skips the start-up transient of a gameplay.

mod calibrate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::Proto;
use crate::detect::{PlatformId, ServerRegistration, SetupClass};
use crate::flow::{FlowState, VolumetricStats};
use crate::Timestamp;

pub use calibrate::{calibrate, CalibrationError, LabeledFlow};

/// Windows whose median decides a role.
pub const DECISION_WINDOWS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowRole {
    GameplayMgmt,
    DownVideo,
    DownAudio,
    UpAudio,
    UserInput,
    CombinedMediaInput,
    StunWebrtc,
    Unclassified,
}

impl FlowRole {
    pub const ALL: [FlowRole; 8] = [
        FlowRole::GameplayMgmt,
        FlowRole::DownVideo,
        FlowRole::DownAudio,
        FlowRole::UpAudio,
        FlowRole::UserInput,
        FlowRole::CombinedMediaInput,
        FlowRole::StunWebrtc,
        FlowRole::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowRole::GameplayMgmt => "gameplay_mgmt",
            FlowRole::DownVideo => "down_video",
            FlowRole::DownAudio => "down_audio",
            FlowRole::UpAudio => "up_audio",
            FlowRole::UserInput => "user_input",
            FlowRole::CombinedMediaInput => "combined_media_input",
            FlowRole::StunWebrtc => "stun_webrtc",
            FlowRole::Unclassified => "unclassified",
        }
    }

    /// Roles of the separate-flow (console application) layout.
    pub fn is_console_media(self) -> bool {
        matches!(self, FlowRole::DownVideo | FlowRole::DownAudio | FlowRole::UpAudio | FlowRole::UserInput)
    }

    /// Roles whose downstream carries the video frames.
    pub fn carries_video(self) -> bool {
        matches!(self, FlowRole::DownVideo | FlowRole::CombinedMediaInput)
    }
}

impl fmt::Display for FlowRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("unknown flow role `{0}`")]
pub struct UnknownRole(String);

impl FromStr for FlowRole {
    type Err = UnknownRole;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlowRole::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| UnknownRole(s.to_string()))
    }
}

/// Volumetric thresholds separating gameplay roles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierCriteria {
    /// Console flows above this inbound payload rate carry video.
    pub video_min_bps_in: f64,
    /// Console flows with |pps_in − pps_out| at or below this carry user input.
    pub input_pps_delta_max: f64,
    /// Inbound (outbound) dominance beyond this marks downstream (upstream) audio.
    pub audio_dominance_pps_delta: f64,
    /// Browser-layout flows at or below this total rate are STUN helpers.
    pub stun_max_pps: f64,
    /// Browser-layout flows at or above this total rate carry media and input.
    pub combined_min_pps: f64,
    /// Candidate flows must start this close to the server registration.
    pub mgmt_window_s: f64,
}

impl Default for ClassifierCriteria {
    fn default() -> Self {
        ClassifierCriteria {
            video_min_bps_in: 5e6,
            input_pps_delta_max: 10.0,
            audio_dominance_pps_delta: 10.0,
            stun_max_pps: 2.0,
            combined_min_pps: 100.0,
            mgmt_window_s: 0.5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CriteriaError {
    #[error("criterion `{0}` must be positive")]
    NotPositive(&'static str),
    #[error("stun_max_pps ({0}) must be below combined_min_pps ({1})")]
    StunAboveCombined(f64, f64),
}

impl ClassifierCriteria {
    pub fn validate(&self) -> Result<(), CriteriaError> {
        let fields = [
            ("video_min_bps_in", self.video_min_bps_in),
            ("input_pps_delta_max", self.input_pps_delta_max),
            ("audio_dominance_pps_delta", self.audio_dominance_pps_delta),
            ("stun_max_pps", self.stun_max_pps),
            ("combined_min_pps", self.combined_min_pps),
            ("mgmt_window_s", self.mgmt_window_s),
        ];
        for (name, v) in fields {
            if v.is_nan() || v <= 0.0 || v.is_infinite() {
                return Err(CriteriaError::NotPositive(name));
            }
        }
        if self.stun_max_pps >= self.combined_min_pps {
            return Err(CriteriaError::StunAboveCombined(self.stun_max_pps, self.combined_min_pps));
        }
        Ok(())
    }
}

/// Median volumetric profile of a flow's decision windows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowFeatures {
    pub pps_in: f64,
    pub pps_out: f64,
    pub bps_in: f64,
    pub bps_out: f64,
}

impl FlowFeatures {
    /// Per-field median of the given windows.
    pub fn from_windows(ws: &[VolumetricStats]) -> Option<FlowFeatures> {
        if ws.is_empty() {
            return None;
        }
        let med = |f: fn(&VolumetricStats) -> f64| {
            let mut v: Vec<f64> = ws.iter().map(f).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            let n = v.len();
            if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
        };
        Some(FlowFeatures {
            pps_in: med(VolumetricStats::pps_in),
            pps_out: med(VolumetricStats::pps_out),
            bps_in: med(VolumetricStats::bps_in),
            bps_out: med(VolumetricStats::bps_out),
        })
    }

    /// Features of the first [`DECISION_WINDOWS`] windows once they have closed.
    pub fn of_flow(flow: &FlowState, now: Timestamp) -> Option<FlowFeatures> {
        flow.first_windows(DECISION_WINDOWS, now).and_then(|ws| Self::from_windows(&ws))
    }

    pub fn pps_total(&self) -> f64 {
        self.pps_in + self.pps_out
    }
}

/// Layout the criteria are applied under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Separate video, audio and input flows.
    Console,
    /// One media+input flow plus a STUN helper.
    Combined,
}

impl Layout {
    pub fn of(platform: PlatformId, class: SetupClass) -> Layout {
        match (platform, class) {
            (PlatformId::XboxCloud, _) => Layout::Combined,
            (_, SetupClass::Browser) => Layout::Combined,
            (_, SetupClass::App) => Layout::Console,
        }
    }
}

/// Pure decision over a volumetric profile.
pub fn classify_features(f: &FlowFeatures, layout: Layout, c: &ClassifierCriteria) -> FlowRole {
    match layout {
        Layout::Combined => {
            let pps = f.pps_total();
            if pps <= c.stun_max_pps {
                FlowRole::StunWebrtc
            } else if pps >= c.combined_min_pps {
                FlowRole::CombinedMediaInput
            } else {
                FlowRole::Unclassified
            }
        }
        Layout::Console => {
            let delta = f.pps_in - f.pps_out;
            if f.bps_in > c.video_min_bps_in {
                FlowRole::DownVideo
            } else if delta.abs() <= c.input_pps_delta_max {
                FlowRole::UserInput
            } else if delta > c.audio_dominance_pps_delta {
                FlowRole::DownAudio
            } else if -delta > c.audio_dominance_pps_delta {
                FlowRole::UpAudio
            } else {
                FlowRole::Unclassified
            }
        }
    }
}

/// Whether `flow` belongs to the gameplay announced by `reg`.
pub fn is_candidate(flow: &FlowState, reg: &ServerRegistration, c: &ClassifierCriteria) -> bool {
    if flow.key.proto != Proto::Udp || flow.key.server_ip != reg.server_ip || flow.key.client_ip != reg.client_ip {
        return false;
    }
    if let Some((lo, hi)) = reg.udp_port_range {
        if !(lo..=hi).contains(&flow.key.server_port) {
            return false;
        }
    }
    flow.first_ts.secs_since(reg.registered_at).abs() <= c.mgmt_window_s
}

/// Role of a gameplay UDP flow; `Unclassified` when it is not a candidate of
/// `reg` or its decision windows have not all closed by `now`.
pub fn classify_flow(flow: &FlowState, reg: &ServerRegistration, c: &ClassifierCriteria, now: Timestamp) -> FlowRole {
    if !is_candidate(flow, reg, c) {
        return FlowRole::Unclassified;
    }
    match FlowFeatures::of_flow(flow, now) {
        Some(f) => classify_features(&f, Layout::of(reg.platform, reg.class), c),
        None => FlowRole::Unclassified,
    }
}
