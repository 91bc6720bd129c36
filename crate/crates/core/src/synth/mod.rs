//! Seeded synthetic captures of cloud-gaming sessions with ground truth.

mod manifest;
pub mod packet;
pub mod profile;
mod session;
pub mod tls;
pub mod video;
pub mod writer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::qoe::Resolution;

pub use manifest::{FlowTruth, GroundTruthManifest, ManifestError, MgmtTruth, SecondTruth, Timeline, MANIFEST_SCHEMA};
pub use profile::{band_range, in_band, target_range, ProfileKind, SessionProfile, MIN_DURATION_S};
pub use session::{
    gen_background, gen_session, handshake_sizes, SynthFlow, SyntheticCapture, HEARTBEAT_PERIOD_S, MGMT_HELLO_LEN,
    MGMT_LEAD_US, PORT_DOWN_AUDIO, PORT_INPUT, PORT_UP_AUDIO, PORT_VIDEO, STUN_PORT, T0_S,
};
pub use video::{gen_video_packets, VideoSecond, VideoTrace};
pub use writer::{write_capture, PcapWriter};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("{mbps} Mbit/s is outside the {resolution} band at {fps} fps")]
    BandMismatch { fps: u32, resolution: Resolution, mbps: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Independent generator stream `stream` of `seed`.
pub(crate) fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
