use thiserror::Error;

use super::{classify_features, ClassifierCriteria, FlowFeatures, FlowRole, Layout, DECISION_WINDOWS};
use crate::flow::VolumetricStats;

/// Minimum windows per training flow.
pub const MIN_LABELED_WINDOWS: usize = 5;

/// Training flow with its ground-truth role.
#[derive(Clone, Debug)]
pub struct LabeledFlow {
    pub stats: Vec<VolumetricStats>,
    pub true_role: FlowRole,
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("labeled flow {index} has {windows} windows, need at least {MIN_LABELED_WINDOWS}")]
    TooFewWindows { index: usize, windows: usize },
    #[error("training set has no {0} flow")]
    MissingRole(FlowRole),
    #[error("no threshold separates the training labels ({reason}); conflicting flows {conflicts:?}")]
    InseparableClasses { reason: String, conflicts: Vec<usize> },
}

fn layout_of(role: FlowRole) -> Option<Layout> {
    match role {
        r if r.is_console_media() => Some(Layout::Console),
        FlowRole::CombinedMediaInput | FlowRole::StunWebrtc => Some(Layout::Combined),
        _ => None,
    }
}

/// Derives classification thresholds from labeled flows.
///
/// The video threshold is the geometric mean of the highest non-video and
/// the lowest video inbound rate; both packet-rate deltas are the largest
/// user-input imbalance plus one packet per second. Browser-layout limits
/// are fitted only when both STUN and combined flows are present. The
/// result is checked against every training flow before it is returned.
pub fn calibrate(labeled: &[LabeledFlow]) -> Result<ClassifierCriteria, CalibrationError> {
    let mut feats = Vec::with_capacity(labeled.len());
    for (index, lf) in labeled.iter().enumerate() {
        if lf.stats.len() < MIN_LABELED_WINDOWS {
            return Err(CalibrationError::TooFewWindows { index, windows: lf.stats.len() });
        }
        let f = FlowFeatures::from_windows(&lf.stats[..DECISION_WINDOWS]).expect("non-empty");
        feats.push((index, lf.true_role, f));
    }
    for role in [FlowRole::DownVideo, FlowRole::DownAudio, FlowRole::UpAudio, FlowRole::UserInput] {
        if !feats.iter().any(|(_, r, _)| *r == role) {
            return Err(CalibrationError::MissingRole(role));
        }
    }

    let mut c = ClassifierCriteria::default();
    let console: Vec<_> = feats.iter().filter(|(_, r, _)| r.is_console_media()).collect();

    let (max_other_idx, max_other) = console
        .iter()
        .filter(|(_, r, _)| *r != FlowRole::DownVideo)
        .map(|(i, _, f)| (*i, f.bps_in))
        .fold((usize::MAX, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    let (min_video_idx, min_video) = console
        .iter()
        .filter(|(_, r, _)| *r == FlowRole::DownVideo)
        .map(|(i, _, f)| (*i, f.bps_in))
        .fold((usize::MAX, f64::MAX), |a, b| if b.1 < a.1 { b } else { a });
    if max_other >= min_video {
        return Err(CalibrationError::InseparableClasses {
            reason: format!("non-video inbound {max_other} b/s reaches video inbound {min_video} b/s"),
            conflicts: vec![max_other_idx, min_video_idx],
        });
    }
    c.video_min_bps_in = (max_other.max(1.0) * min_video).sqrt();

    let input_delta = console
        .iter()
        .filter(|(_, r, _)| *r == FlowRole::UserInput)
        .map(|(_, _, f)| (f.pps_in - f.pps_out).abs())
        .fold(0.0, f64::max);
    c.input_pps_delta_max = input_delta + 1.0;
    c.audio_dominance_pps_delta = input_delta + 1.0;

    let stun_max = feats.iter().filter(|(_, r, _)| *r == FlowRole::StunWebrtc).map(|(_, _, f)| f.pps_total()).reduce(f64::max);
    let comb_min = feats
        .iter()
        .filter(|(_, r, _)| *r == FlowRole::CombinedMediaInput)
        .map(|(_, _, f)| f.pps_total())
        .reduce(f64::min);
    if let (Some(s), Some(m)) = (stun_max, comb_min) {
        if s >= m {
            return Err(CalibrationError::InseparableClasses {
                reason: format!("STUN rate {s} pps reaches combined rate {m} pps"),
                conflicts: feats
                    .iter()
                    .filter(|(_, r, _)| matches!(r, FlowRole::StunWebrtc | FlowRole::CombinedMediaInput))
                    .map(|(i, _, _)| *i)
                    .collect(),
            });
        }
        // A positive floor keeps an all-silent STUN set valid.
        c.stun_max_pps = s.max(f64::MIN_POSITIVE);
        c.combined_min_pps = m;
    }

    let conflicts: Vec<usize> = feats
        .iter()
        .filter(|(_, r, f)| layout_of(*r).is_some_and(|l| classify_features(f, l, &c) != *r))
        .map(|(i, _, _)| *i)
        .collect();
    if !conflicts.is_empty() {
        return Err(CalibrationError::InseparableClasses {
            reason: "calibrated criteria misclassify training flows".into(),
            conflicts,
        });
    }
    Ok(c)
}
