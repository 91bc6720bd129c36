use rand::Rng;

use super::profile::in_band;
use super::{sub_rng, SynthError};
use crate::qoe::Resolution;

/// Payload of a full video packet.
pub const FULL_PACKET: u32 = 1466;
pub const MARKER_MIN: u32 = 216;
pub const MARKER_MAX: u32 = FULL_PACKET - 1;
/// Frame starts deviate from the nominal grid by up to this much.
pub const FRAME_JITTER_US: i64 = 2_000;
/// Share of a frame period its packets are spread over.
const SPREAD: f64 = 0.3;

/// One video frame: `full` packets of [`FULL_PACKET`] bytes, then a marker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    /// Offset of the first packet from the stream start.
    pub start_us: i64,
    pub full: u32,
    pub marker: u32,
    /// Spacing between consecutive packets of the frame.
    pub gap_us: i64,
}

impl Frame {
    pub fn packet_count(&self) -> u32 {
        self.full + 1
    }

    pub fn bytes(&self) -> u64 {
        self.full as u64 * FULL_PACKET as u64 + self.marker as u64
    }

    pub fn marker_offset_us(&self) -> i64 {
        self.start_us + self.full as i64 * self.gap_us
    }

    /// Packet offsets and sizes, marker last.
    pub fn packets(&self) -> impl Iterator<Item = (i64, u32)> + '_ {
        (0..=self.full).map(move |i| (self.start_us + i as i64 * self.gap_us, if i == self.full { self.marker } else { FULL_PACKET }))
    }
}

/// Marker size for a frame of `frame_bytes`.
pub fn marker_size(frame_bytes: u64) -> u32 {
    ((frame_bytes % FULL_PACKET as u64) as u32).clamp(MARKER_MIN, MARKER_MAX)
}

/// Frames of one second of video starting at `second_offset_us`.
pub fn second_of_frames(rng: &mut impl Rng, fps: u32, bitrate_bps: f64, second_offset_us: i64, out: &mut Vec<Frame>) {
    let mean = bitrate_bps / (8.0 * fps as f64);
    let period = 1e6 / fps as f64;
    for k in 0..fps {
        let bytes = (mean * rng.random_range(0.8..=1.2)).round() as u64;
        let full = (bytes / FULL_PACKET as u64) as u32;
        let jitter = rng.random_range(-FRAME_JITTER_US..=FRAME_JITTER_US);
        let start = second_offset_us + ((k as f64 + 0.5) * period).round() as i64 + jitter;
        let gap = (period * SPREAD / full.max(1) as f64) as i64;
        out.push(Frame { start_us: start, full, marker: marker_size(bytes), gap_us: gap.max(1) });
    }
}

/// Per-second ground truth of a generated stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VideoSecond {
    pub fps: u32,
    pub bitrate_bps: f64,
}

/// A constant-rate video stream.
#[derive(Clone, Debug)]
pub struct VideoTrace {
    pub packets: Vec<(i64, u32)>,
    pub seconds: Vec<VideoSecond>,
}

/// Video packets for `duration_s` seconds at `fps` and a steady bitrate
/// inside the band of `res`. Offsets are from the stream start.
pub fn gen_video_packets(fps: u32, res: Resolution, target_bitrate_bps: f64, duration_s: u32, seed: u64) -> Result<VideoTrace, SynthError> {
    let mbps = target_bitrate_bps / 1e6;
    if !in_band(fps, res, mbps) {
        return Err(SynthError::BandMismatch { fps, resolution: res, mbps });
    }
    let mut rng = sub_rng(seed, 7);
    let mut frames = Vec::new();
    for s in 0..duration_s {
        second_of_frames(&mut rng, fps, target_bitrate_bps, s as i64 * 1_000_000, &mut frames);
    }
    Ok(VideoTrace {
        packets: frames.iter().flat_map(|f| f.packets().collect::<Vec<_>>()).collect(),
        seconds: (0..duration_s).map(|_| VideoSecond { fps, bitrate_bps: target_bitrate_bps }).collect(),
    })
}
