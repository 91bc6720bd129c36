use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Fhd,
    Hd,
    Sd,
    Unknown,
}

impl Resolution {
    pub const ALL: [Resolution; 4] = [Resolution::Fhd, Resolution::Hd, Resolution::Sd, Resolution::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::Fhd => "fhd",
            Resolution::Hd => "hd",
            Resolution::Sd => "sd",
            Resolution::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Resolution {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Resolution::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown resolution `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpsBand {
    Low,
    Medium,
    High,
}

impl FpsBand {
    pub const ALL: [FpsBand; 3] = [FpsBand::Low, FpsBand::Medium, FpsBand::High];

    pub fn as_str(self) -> &'static str {
        match self {
            FpsBand::Low => "low",
            FpsBand::Medium => "medium",
            FpsBand::High => "high",
        }
    }
}

impl fmt::Display for FpsBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FpsBand {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FpsBand::ALL.into_iter().find(|b| b.as_str() == s).ok_or_else(|| format!("unknown fps band `{s}`"))
    }
}

/// Below 40 fps is low, above 50 high, the rest medium.
pub fn fps_band(fps: f64) -> FpsBand {
    if fps < 40.0 {
        FpsBand::Low
    } else if fps <= 50.0 {
        FpsBand::Medium
    } else {
        FpsBand::High
    }
}

/// Upper band edges of one nominal frame rate, in Mbit/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub nominal_fps: u32,
    pub sd_max_mbps: f64,
    pub hd_max_mbps: f64,
}

/// Peak downstream video bitrate to resolution band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionTable {
    pub high: ResolutionRow,
    pub low: ResolutionRow,
    /// Measured rates above this use the `high` row.
    pub nominal_fps_split: f64,
    /// Below this the stream is taken as idle and left unlabelled.
    pub floor_mbps: f64,
}

impl Default for ResolutionTable {
    fn default() -> Self {
        ResolutionTable {
            high: ResolutionRow { nominal_fps: 60, sd_max_mbps: 13.0, hd_max_mbps: 22.0 },
            low: ResolutionRow { nominal_fps: 30, sd_max_mbps: 8.0, hd_max_mbps: 14.0 },
            nominal_fps_split: 45.0,
            floor_mbps: 2.0,
        }
    }
}

impl ResolutionTable {
    pub fn row(&self, fps: f64) -> &ResolutionRow {
        if fps > self.nominal_fps_split { &self.high } else { &self.low }
    }

    pub fn infer(&self, fps: f64, peak_mbps: f64) -> Resolution {
        if peak_mbps.is_nan() || peak_mbps < self.floor_mbps {
            return Resolution::Unknown;
        }
        let row = self.row(fps);
        if peak_mbps <= row.sd_max_mbps {
            Resolution::Sd
        } else if peak_mbps <= row.hd_max_mbps {
            Resolution::Hd
        } else {
            Resolution::Fhd
        }
    }

    pub fn is_valid(&self) -> bool {
        let ok = |r: &ResolutionRow| 0.0 < r.sd_max_mbps && r.sd_max_mbps < r.hd_max_mbps;
        ok(&self.high) && ok(&self.low) && self.floor_mbps >= 0.0
    }
}
