//! Packet, frame, and subflow vocabulary shared by every other module.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Application subflow classes. `Background` covers all non-conferencing
/// traffic; everything else is a conferencing subflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubflowKind {
    Audio,
    Base,
    HighFpsEnhancement,
    LowFpsEnhancement,
    SmallWindowVideo,
    Probe,
    Control,
    Background,
}

impl SubflowKind {
    pub fn is_video(self) -> bool {
        matches!(
            self,
            SubflowKind::Base
                | SubflowKind::HighFpsEnhancement
                | SubflowKind::LowFpsEnhancement
                | SubflowKind::SmallWindowVideo
        )
    }

    /// Enhancement layers depend on the base layer and are the first to be
    /// demoted or dropped.
    pub fn is_enhancement(self) -> bool {
        matches!(
            self,
            SubflowKind::HighFpsEnhancement
                | SubflowKind::LowFpsEnhancement
                | SubflowKind::SmallWindowVideo
        )
    }

    pub fn is_zoom(self) -> bool {
        self != SubflowKind::Background
    }

    pub fn label(self) -> &'static str {
        match self {
            SubflowKind::Audio => "audio",
            SubflowKind::Base => "base",
            SubflowKind::HighFpsEnhancement => "enh_high_fps",
            SubflowKind::LowFpsEnhancement => "enh_low_fps",
            SubflowKind::SmallWindowVideo => "small_window",
            SubflowKind::Probe => "probe",
            SubflowKind::Control => "control",
            SubflowKind::Background => "background",
        }
    }

    pub fn parse_label(s: &str) -> Result<Self> {
        Ok(match s {
            "audio" => SubflowKind::Audio,
            "base" => SubflowKind::Base,
            "enh_high_fps" => SubflowKind::HighFpsEnhancement,
            "enh_low_fps" => SubflowKind::LowFpsEnhancement,
            "small_window" => SubflowKind::SmallWindowVideo,
            "probe" => SubflowKind::Probe,
            "control" => SubflowKind::Control,
            "background" => SubflowKind::Background,
            other => return Err(Error::InvalidInput(format!("unknown subflow kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Downlink,
    Uplink,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Downlink => "dl",
            Direction::Uplink => "ul",
        }
    }

    pub fn parse_label(s: &str) -> Result<Self> {
        Ok(match s {
            "dl" => Direction::Downlink,
            "ul" => Direction::Uplink,
            other => return Err(Error::InvalidInput(format!("unknown direction {other:?}"))),
        })
    }
}

/// Two-class priority abstraction over DRBs (downlink) and LCGs (uplink).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    High,
    Low,
}

impl Priority {
    pub fn label(self) -> &'static str {
        match self {
            Priority::High => "high",
            Priority::Low => "low",
        }
    }
}

/// Drop directive attached to a priority-class assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropPolicy {
    Keep,
    Drop,
    DropWithProbability(f64),
}

impl DropPolicy {
    pub fn validate(&self) -> Result<()> {
        if let DropPolicy::DropWithProbability(p) = self {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidArgument(format!(
                    "drop probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Priority class plus drop directive, as applied by the marking path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marking {
    pub priority: Priority,
    pub drop: DropPolicy,
}

impl Marking {
    pub fn keep(priority: Priority) -> Self {
        Marking { priority, drop: DropPolicy::Keep }
    }
}

/// Simulated RTP header. All packets of one frame share `frame_id` and
/// `timestamp`; exactly one carries `last_of_frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtpHeader {
    pub timestamp: u32,
    pub sequence: u16,
    pub frame_id: u64,
    pub last_of_frame: bool,
    pub extension_data: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Transport {
    pub src_port: u16,
    pub dst_port: u16,
    pub is_syn: bool,
    pub is_large_data: bool,
}

/// Pipeline timestamps in milliseconds, filled in as the packet advances.
/// When present they are monotone: emit <= ingress <= deliver <= ack.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stamps {
    pub app_emit_ms: Option<f64>,
    pub sdap_ingress_ms: Option<f64>,
    pub phy_deliver_ms: Option<f64>,
    pub ack_ms: Option<f64>,
}

impl Stamps {
    pub fn monotone(&self) -> bool {
        let seq = [
            self.app_emit_ms,
            self.sdap_ingress_ms,
            self.phy_deliver_ms,
            self.ack_ms,
        ];
        let mut prev = f64::NEG_INFINITY;
        for s in seq.into_iter().flatten() {
            if s < prev {
                return false;
            }
            prev = s;
        }
        true
    }
}

pub type UeId = u32;

/// One simulated IP/RTP packet.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPacket {
    pub id: u64,
    pub ue: UeId,
    pub direction: Direction,
    pub size_bytes: u32,
    pub kind: SubflowKind,
    pub rtp: Option<RtpHeader>,
    pub transport: Transport,
    /// L7 type byte at payload offset 8, present for conferencing traffic.
    pub zoom_pkt_type: Option<u8>,
    pub stamps: Stamps,
    pub priority: Priority,
}

/// Convert an (unwrapped) RTP timestamp in sampling instants to
/// milliseconds by dividing by the sampling rate.
pub fn rtp_ts_to_ms(timestamp: u64, sample_rate_hz: f64) -> Result<f64> {
    if !sample_rate_hz.is_finite() || sample_rate_hz <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )));
    }
    Ok(timestamp as f64 / sample_rate_hz * 1000.0)
}

/// Unwraps 32-bit RTP timestamps into a monotone 64-bit counter.
/// Per-flow state; deltas are assumed to be below 2^31.
#[derive(Debug, Default, Clone)]
pub struct RtpTimestampUnwrapper {
    last_extended: Option<i64>,
}

impl RtpTimestampUnwrapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unwrap(&mut self, ts: u32) -> u64 {
        const MOD: i64 = 1 << 32;
        let extended = match self.last_extended {
            None => ts as i64,
            Some(prev) => {
                let mut delta = (ts as i64 - (prev & (MOD - 1))) % MOD;
                if delta >= MOD / 2 {
                    delta -= MOD;
                } else if delta < -MOD / 2 {
                    delta += MOD;
                }
                prev + delta
            }
        };
        let extended = extended.max(0);
        self.last_extended = Some(extended);
        extended as u64
    }
}
