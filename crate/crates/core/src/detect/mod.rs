//! Platform-session detection from service names and handshake sizes.

mod codebook;
mod detector;

pub use codebook::{
    match_setup_signature, Codebook, CodebookError, DomainPattern, GameplayPattern, Os, PlatformId, ServiceCodebook,
    SetupClass, SetupSignature, SetupType, DEFAULT_CODEBOOK,
};
pub use detector::{
    fallback_setup, ClientState, DetectionSource, DetectorConfig, DetectorCounters, PlatformDetection, ServerRegistration,
    SessionDetector, SessionRecord, SessionState,
};
