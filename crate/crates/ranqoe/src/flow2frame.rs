//! Packet-to-frame alignment: place per-frame RTP times on the camera
//! PTS axis by minimizing false positives, then map every camera frame
//! to its sampling point and classify why missing frames are missing.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::{Error, Result};

/// Inputs for the alignment search. Camera PTS values are increasing;
/// `rtp_points_ms` are per-frame RTP times relative to the first point
/// (so the first entry is 0). `rx_rendered` holds the camera-frame
/// indices that were actually displayed at the receiver.
#[derive(Debug, Clone)]
pub struct AlignmentInput {
    pub cam_pts_ms: Vec<f64>,
    pub rtp_points_ms: Vec<f64>,
    pub rx_rendered: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FrameMapping {
    /// Camera frame sampled by the sender; index into `rtp_points_ms`.
    Sampled { rtp_index: usize },
    SkippedAtSender,
}

#[derive(Debug, Clone)]
pub struct DeltaEvaluation {
    pub delta_ms: u32,
    /// Camera frame linked to each RTP point, in point order.
    pub links: Vec<usize>,
    pub tx_skipped: BTreeSet<usize>,
    pub false_positives: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub best_delta_ms: u32,
    pub accuracy: f64,
    pub false_positives: usize,
    pub mapping: Vec<FrameMapping>,
    pub per_delta_false_positives: Vec<(u32, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MissingCause {
    SkippedAtSender,
    LostInNetwork,
    DroppedAtReceiver,
}

impl MissingCause {
    pub fn label(self) -> &'static str {
        match self {
            MissingCause::SkippedAtSender => "skipped_at_sender",
            MissingCause::LostInNetwork => "lost_in_network",
            MissingCause::DroppedAtReceiver => "dropped_at_receiver",
        }
    }
}

fn validate(input: &AlignmentInput) -> Result<()> {
    if input.rtp_points_ms.is_empty() {
        return Err(Error::InvalidInput("alignment needs at least one RTP point".into()));
    }
    if input.cam_pts_ms.len() < 2 {
        return Err(Error::InvalidInput("alignment needs at least two camera frames".into()));
    }
    if input.cam_pts_ms.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("camera PTS must be strictly increasing".into()));
    }
    if input.rtp_points_ms.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("RTP points must be sorted".into()));
    }
    Ok(())
}

/// Evaluate one candidate placement: absolute points are
/// `cam_pts[0] + delta + rtp_points`; each point links to the closest
/// camera frame at or to its left; unsampled frames are TX-skipped; a
/// false positive is a TX-skipped frame that was rendered at the RX.
pub fn evaluate_delta(input: &AlignmentInput, delta_ms: u32) -> DeltaEvaluation {
    let base = input.cam_pts_ms[0] + delta_ms as f64;
    let mut links = Vec::with_capacity(input.rtp_points_ms.len());
    let mut sampled = BTreeSet::new();
    for rel in &input.rtp_points_ms {
        let p = base + rel;
        // Closest camera frame at or left of the point.
        let idx = match input.cam_pts_ms.partition_point(|&c| c <= p) {
            0 => 0,
            k => k - 1,
        };
        links.push(idx);
        sampled.insert(idx);
    }
    let tx_skipped: BTreeSet<usize> =
        (0..input.cam_pts_ms.len()).filter(|i| !sampled.contains(i)).collect();
    let false_positives = tx_skipped.iter().filter(|f| input.rx_rendered.contains(f)).count();
    let accuracy = if tx_skipped.is_empty() {
        // No frame was skipped; nothing can be misclassified.
        1.0
    } else {
        (tx_skipped.len() - false_positives) as f64 / tx_skipped.len() as f64
    };
    DeltaEvaluation { delta_ms, links, tx_skipped, false_positives, accuracy }
}

/// Search every integer millisecond offset in `[0, cam_pts[1] - cam_pts[0])`
/// and keep the placement with maximal accuracy, preferring the largest
/// offset on ties.
pub fn align(input: &AlignmentInput) -> Result<AlignmentResult> {
    validate(input)?;
    let span = input.cam_pts_ms[1] - input.cam_pts_ms[0];
    let mut best: Option<DeltaEvaluation> = None;
    let mut per_delta = Vec::new();
    let mut delta = 0u32;
    while (delta as f64) < span {
        let eval = evaluate_delta(input, delta);
        per_delta.push((delta, eval.false_positives));
        let better = match &best {
            None => true,
            Some(b) => eval.accuracy >= b.accuracy,
        };
        if better {
            best = Some(eval);
        }
        delta += 1;
    }
    let best = best.expect("span >= 1 ms because cam_pts is strictly increasing");

    let mut mapping = vec![FrameMapping::SkippedAtSender; input.cam_pts_ms.len()];
    for (rtp_index, frame) in best.links.iter().enumerate() {
        if let FrameMapping::SkippedAtSender = mapping[*frame] {
            mapping[*frame] = FrameMapping::Sampled { rtp_index };
        }
    }
    Ok(AlignmentResult {
        best_delta_ms: best.delta_ms,
        accuracy: best.accuracy,
        false_positives: best.false_positives,
        mapping,
        per_delta_false_positives: per_delta,
    })
}

/// Classify why a camera frame is absent from the receiver display.
/// `fully_delivered` holds frames whose packets were all delivered.
pub fn classify_missing(
    frame: usize,
    alignment: &AlignmentResult,
    fully_delivered: &BTreeSet<usize>,
) -> MissingCause {
    match alignment.mapping.get(frame) {
        Some(FrameMapping::SkippedAtSender) | None => MissingCause::SkippedAtSender,
        Some(FrameMapping::Sampled { .. }) => {
            if fully_delivered.contains(&frame) {
                MissingCause::DroppedAtReceiver
            } else {
                MissingCause::LostInNetwork
            }
        }
    }
}
