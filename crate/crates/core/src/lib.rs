//! Passive detection and experience measurement of cloud-gaming sessions.
//!
//! The pipeline reads packet captures ([`capture`]), folds packets into a
//! bidirectional flow table with per-window volumetric statistics ([`flow`]),
//! detects platform sessions and user setups from service names or payload
//! size signatures ([`detect`]), assigns gameplay flows their functional
//! role ([`classify`]) and derives latency, frame rate and resolution series
//! ([`qoe`]). [`analysis`] wires those stages together and [`report`]
//! aggregates the resulting series. [`synth`] generates annotated synthetic
//! captures used as ground truth throughout the test suites.

pub mod analysis;
pub mod capture;
pub mod classify;
pub mod detect;
pub mod flow;
pub mod qoe;
pub mod report;
pub mod synth;

mod time;

pub use analysis::{AnalysisReport, Analyzer, AnalyzerConfig};
pub use capture::{CaptureReader, LinkType, PacketRecord};
pub use classify::{ClassifierCriteria, FlowRole};
pub use detect::{Codebook, SetupType};
pub use flow::{ClientNets, FlowKey, FlowTable};
pub use qoe::QoeSample;
pub use synth::{GroundTruthManifest, SessionProfile};
pub use time::Timestamp;
