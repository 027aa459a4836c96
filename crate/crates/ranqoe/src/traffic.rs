//! Synthetic traffic sources: conferencing flows (audio, layered video,
//! probes, control) with probe- and delay-driven rate adaptation, and
//! adaptive background flows (bulk AIMD, light web bursts). Every source
//! keeps a ground-truth log for verification.

use serde::{Deserialize, Serialize};

use crate::controller::FlowId;
use crate::dpi::{TYPE_AUDIO, TYPE_PROBE, TYPE_VIDEO, ZOOM_PORT};
use crate::packet::{Direction, Priority, RtpHeader, SimPacket, Stamps, SubflowKind, Transport};
use crate::{Error, Result};

pub const CONTROL_PKT_TYPE: u8 = 0x13;

/// Piecewise-linear curve with clamped ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let pl = PiecewiseLinear { points };
        pl.validate()?;
        Ok(pl)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidConfig("piecewise curve needs at least one point".into()));
        }
        if self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig("piecewise curve x values must increase".into()));
        }
        Ok(())
    }

    pub fn is_monotone_non_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    pub fn is_monotone_non_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= w[0].1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        if x >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        for w in pts.windows(2) {
            if x <= w[1].0 {
                let t = (x - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + t * (w[1].1 - w[0].1);
            }
        }
        pts[pts.len() - 1].1
    }
}

fn default_rate_curve() -> PiecewiseLinear {
    PiecewiseLinear { points: vec![(0.0, 0.3), (0.5, 0.6), (1.0, 1.0)] }
}

fn default_congestion_backoff() -> PiecewiseLinear {
    PiecewiseLinear {
        points: vec![(0.0, 1.0), (100.0, 1.0), (300.0, 0.7), (600.0, 0.45), (1000.0, 0.25)],
    }
}

fn d20() -> f64 {
    20.0
}
fn d33() -> f64 {
    33.0
}
fn d8() -> f64 {
    8.0
}
fn d16() -> f64 {
    16.0
}
fn d2000() -> f64 {
    2000.0
}
fn d25() -> f64 {
    25.0
}
fn dsteady() -> f64 {
    8.0
}
fn d48k() -> f64 {
    48_000.0
}
fn d90k() -> f64 {
    90_000.0
}
fn d2() -> u32 {
    2
}
fn d3() -> u32 {
    3
}
fn d600() -> u32 {
    600
}
fn d1100() -> u32 {
    1100
}
fn d1200() -> u32 {
    1200
}
fn d150() -> u32 {
    150
}
fn d500() -> f64 {
    500.0
}
fn d120() -> u32 {
    120
}

/// Conferencing source parameters. Per-frame packet counts and sizes are
/// config data; enhancement frames are only emitted while the base layer
/// runs at its full target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoomSourceConfig {
    #[serde(default = "d20")]
    pub audio_interval_ms: f64,
    #[serde(default = "d150")]
    pub audio_pkt_bytes: u32,
    /// Audio RTP clock; not specified by the application, assumed 48 kHz.
    #[serde(default = "d48k")]
    pub audio_sample_rate_hz: f64,
    #[serde(default = "d90k")]
    pub video_sample_rate_hz: f64,
    #[serde(default = "d33")]
    pub frame_interval_ms: f64,
    #[serde(default = "d8")]
    pub base_fps_target: f64,
    #[serde(default = "d16")]
    pub enh_fps_target: f64,
    #[serde(default = "d2")]
    pub base_pkts_per_frame: u32,
    #[serde(default = "d600")]
    pub base_pkt_bytes: u32,
    #[serde(default = "d3")]
    pub enh_pkts_per_frame: u32,
    #[serde(default = "d1100")]
    pub enh_pkt_bytes: u32,
    #[serde(default = "d2000")]
    pub probe_duration_ms: f64,
    #[serde(default = "d25")]
    pub probe_rate_pps: f64,
    /// Steady-state probing rate after the initial ramp burst.
    #[serde(default = "dsteady")]
    pub probe_steady_pps: f64,
    #[serde(default = "d1200")]
    pub probe_pkt_bytes: u32,
    #[serde(default = "d500")]
    pub control_interval_ms: f64,
    #[serde(default = "d120")]
    pub control_pkt_bytes: u32,
    /// Probe delivery ratio -> sending-rate multiplier, monotone
    /// non-decreasing.
    #[serde(default = "default_rate_curve")]
    pub rate_curve: PiecewiseLinear,
    /// Observed one-way delay (ms) -> rate multiplier, monotone
    /// non-increasing.
    #[serde(default = "default_congestion_backoff")]
    pub congestion_backoff: PiecewiseLinear,
}

impl Default for ZoomSourceConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl ZoomSourceConfig {
    pub fn validate(&self) -> Result<()> {
        self.rate_curve.validate()?;
        self.congestion_backoff.validate()?;
        if !self.rate_curve.is_monotone_non_decreasing() {
            return Err(Error::InvalidConfig("rate_curve must be monotone non-decreasing".into()));
        }
        if !self.congestion_backoff.is_monotone_non_increasing() {
            return Err(Error::InvalidConfig(
                "congestion_backoff must be monotone non-increasing".into(),
            ));
        }
        for (name, v) in [
            ("audio_interval_ms", self.audio_interval_ms),
            ("frame_interval_ms", self.frame_interval_ms),
            ("base_fps_target", self.base_fps_target),
            ("enh_fps_target", self.enh_fps_target),
            ("audio_sample_rate_hz", self.audio_sample_rate_hz),
            ("video_sample_rate_hz", self.video_sample_rate_hz),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Feedback the sender reacts to each step.
#[derive(Debug, Clone, Copy)]
pub struct ZoomFeedback {
    pub probe_delivery_ratio: f64,
    pub recent_delay_ms: f64,
}

impl Default for ZoomFeedback {
    fn default() -> Self {
        ZoomFeedback { probe_delivery_ratio: 1.0, recent_delay_ms: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FrameLayer {
    BaseLayer,
    Enhancement,
}

/// Ground truth per camera frame: whether it was emitted and under which
/// RTP timestamp.
#[derive(Debug, Clone, Copy)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub camera_pts_ms: f64,
    pub emitted: bool,
    pub rtp_timestamp: u32,
    pub layer: Option<FrameLayer>,
}

#[derive(Debug, Default, Clone)]
pub struct GroundTruthLog {
    pub frames: Vec<FrameRecord>,
    /// (bucket_start_ms, bits emitted) in 100 ms buckets.
    pub send_rate: Vec<(f64, u64)>,
}

impl GroundTruthLog {
    fn record_bits(&mut self, now_ms: f64, bits: u64) {
        let bucket = (now_ms / 100.0).floor() * 100.0;
        match self.send_rate.last_mut() {
            Some((b, acc)) if *b == bucket => *acc += bits,
            _ => self.send_rate.push((bucket, bits)),
        }
    }

    /// Mean emitted rate in bits/s over [from_ms, to_ms).
    pub fn mean_send_rate_bps(&self, from_ms: f64, to_ms: f64) -> f64 {
        if to_ms <= from_ms {
            return 0.0;
        }
        let bits: u64 = self
            .send_rate
            .iter()
            .filter(|(b, _)| *b >= from_ms && *b < to_ms)
            .map(|(_, v)| *v)
            .sum();
        bits as f64 / ((to_ms - from_ms) / 1000.0)
    }
}

pub struct IdGen {
    next: u64,
}

impl IdGen {
    pub fn new() -> Self {
        IdGen { next: 0 }
    }

    pub fn next(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

impl Default for IdGen {
    fn default() -> Self {
        Self::new()
    }
}

/// One conferencing sender. Single-owner mutable state driven by the
/// slot loop; all clocks are derived from the configured intervals so a
/// run is fully deterministic.
pub struct ZoomSource {
    pub cfg: ZoomSourceConfig,
    pub flow: FlowId,
    start_ms: Option<f64>,
    next_audio_ms: f64,
    next_frame_ms: f64,
    next_probe_ms: f64,
    next_control_ms: f64,
    camera_index: u64,
    audio_index: u64,
    base_acc: f64,
    enh_acc: f64,
    last_base_emit_ms: Option<f64>,
    video_seq: u16,
    audio_seq: u16,
    pub log: GroundTruthLog,
}

impl ZoomSource {
    pub fn new(cfg: ZoomSourceConfig, flow: FlowId) -> Result<Self> {
        cfg.validate()?;
        Ok(ZoomSource {
            cfg,
            flow,
            start_ms: None,
            next_audio_ms: 0.0,
            next_frame_ms: 0.0,
            next_probe_ms: 0.0,
            next_control_ms: 0.0,
            camera_index: 0,
            audio_index: 0,
            base_acc: 0.0,
            enh_acc: 0.0,
            last_base_emit_ms: None,
            video_seq: 0,
            audio_seq: 0,
            log: GroundTruthLog::default(),
        })
    }

    fn transport(&self) -> Transport {
        // Server side talks from port 8801.
        match self.flow.direction {
            Direction::Downlink => Transport { src_port: ZOOM_PORT, dst_port: 40_000 + self.flow.index as u16, ..Default::default() },
            Direction::Uplink => Transport { src_port: 40_000 + self.flow.index as u16, dst_port: ZOOM_PORT, ..Default::default() },
        }
    }

    fn packet(
        &self,
        id: u64,
        kind: SubflowKind,
        size: u32,
        rtp: Option<RtpHeader>,
        pkt_type: u8,
        now_ms: f64,
    ) -> SimPacket {
        SimPacket {
            id,
            ue: self.flow.ue,
            direction: self.flow.direction,
            size_bytes: size,
            kind,
            rtp,
            transport: Transport { is_large_data: size >= 1000, ..self.transport() },
            zoom_pkt_type: Some(pkt_type),
            stamps: Stamps { app_emit_ms: Some(now_ms), ..Default::default() },
            priority: Priority::Low,
        }
    }

    /// Current rate multiplier and the resulting per-layer frame budgets.
    fn budgets(&self, feedback: &ZoomFeedback) -> (f64, f64) {
        let mult = (self.cfg.rate_curve.eval(feedback.probe_delivery_ratio)
            * self.cfg.congestion_backoff.eval(feedback.recent_delay_ms))
        .clamp(0.0, 1.0);
        let budget = mult * (self.cfg.base_fps_target + self.cfg.enh_fps_target);
        let base_rate = budget.min(self.cfg.base_fps_target);
        let enh_rate = budget - base_rate;
        (base_rate, enh_rate)
    }

    /// Advance to `now_ms`, emitting everything due. Must be called in
    /// nondecreasing time order.
    pub fn step(&mut self, now_ms: f64, feedback: &ZoomFeedback, ids: &mut IdGen) -> Vec<SimPacket> {
        let start = *self.start_ms.get_or_insert_with(|| {
            self.next_audio_ms = now_ms;
            self.next_frame_ms = now_ms;
            self.next_probe_ms = now_ms;
            self.next_control_ms = now_ms;
            now_ms
        });
        let mut out = Vec::new();
        const EPS: f64 = 1e-9;

        // Audio: one packet per sample, paced on its own clock.
        while self.next_audio_ms <= now_ms + EPS {
            let t = self.next_audio_ms;
            let rel = t - start;
            let ts = (rel * self.cfg.audio_sample_rate_hz / 1000.0).round() as u64 as u32;
            let rtp = RtpHeader {
                timestamp: ts,
                sequence: self.audio_seq,
                frame_id: self.audio_index,
                last_of_frame: true,
                extension_data: [0; 3],
            };
            self.audio_seq = self.audio_seq.wrapping_add(1);
            self.audio_index += 1;
            out.push(self.packet(ids.next(), SubflowKind::Audio, self.cfg.audio_pkt_bytes, Some(rtp), TYPE_AUDIO, t));
            self.next_audio_ms += self.cfg.audio_interval_ms;
        }

        // Video: camera clock ticks; rate budgets decide which frames are
        // encoded as base or enhancement and which are skipped.
        while self.next_frame_ms <= now_ms + EPS {
            let t = self.next_frame_ms;
            let rel = t - start;
            let (base_rate, enh_rate) = self.budgets(feedback);
            let dt = self.cfg.frame_interval_ms / 1000.0;
            self.base_acc = (self.base_acc + base_rate * dt).min(2.0);
            self.enh_acc = (self.enh_acc + enh_rate * dt).min(2.0);

            let frame_id = self.camera_index;
            let ts = (rel * self.cfg.video_sample_rate_hz / 1000.0).round() as u64 as u32;
            // Enhancement frames anchor on a recent base frame.
            let base_fresh = self
                .last_base_emit_ms
                .map(|b| t - b <= 2.0 * 1000.0 / self.cfg.base_fps_target)
                .unwrap_or(false);

            let layer = if self.base_acc >= 1.0 {
                self.base_acc -= 1.0;
                self.last_base_emit_ms = Some(t);
                Some(FrameLayer::BaseLayer)
            } else if self.enh_acc >= 1.0 && base_fresh {
                self.enh_acc -= 1.0;
                Some(FrameLayer::Enhancement)
            } else {
                None
            };

            if let Some(layer) = layer {
                let (kind, pkts, size, ext) = match layer {
                    FrameLayer::BaseLayer => (
                        SubflowKind::Base,
                        self.cfg.base_pkts_per_frame,
                        self.cfg.base_pkt_bytes,
                        [0x50, 0x00, 0x00],
                    ),
                    FrameLayer::Enhancement => (
                        SubflowKind::HighFpsEnhancement,
                        self.cfg.enh_pkts_per_frame,
                        self.cfg.enh_pkt_bytes,
                        [0x5f, 0xf7, 0x77],
                    ),
                };
                for k in 0..pkts.max(1) {
                    let rtp = RtpHeader {
                        timestamp: ts,
                        sequence: self.video_seq,
                        frame_id,
                        last_of_frame: k + 1 == pkts.max(1),
                        extension_data: ext,
                    };
                    self.video_seq = self.video_seq.wrapping_add(1);
                    out.push(self.packet(ids.next(), kind, size, Some(rtp), TYPE_VIDEO, t));
                }
                self.log.frames.push(FrameRecord {
                    frame_id,
                    camera_pts_ms: rel,
                    emitted: true,
                    rtp_timestamp: ts,
                    layer: Some(layer),
                });
            } else {
                self.log.frames.push(FrameRecord {
                    frame_id,
                    camera_pts_ms: rel,
                    emitted: false,
                    rtp_timestamp: ts,
                    layer: None,
                });
            }
            self.camera_index += 1;
            self.next_frame_ms += self.cfg.frame_interval_ms;
        }

        // Probes: initial ramp burst, then steady low-rate probing.
        loop {
            let in_ramp = self.next_probe_ms - start < self.cfg.probe_duration_ms;
            let pps = if in_ramp { self.cfg.probe_rate_pps } else { self.cfg.probe_steady_pps };
            if pps <= 0.0 || self.next_probe_ms > now_ms + EPS {
                break;
            }
            let t = self.next_probe_ms;
            out.push(self.packet(ids.next(), SubflowKind::Probe, self.cfg.probe_pkt_bytes, None, TYPE_PROBE, t));
            self.next_probe_ms += 1000.0 / pps;
        }

        // Sparse control messages.
        while self.cfg.control_interval_ms > 0.0 && self.next_control_ms <= now_ms + EPS {
            let t = self.next_control_ms;
            out.push(self.packet(ids.next(), SubflowKind::Control, self.cfg.control_pkt_bytes, None, CONTROL_PKT_TYPE, t));
            self.next_control_ms += self.cfg.control_interval_ms;
        }

        let bits: u64 = out.iter().map(|p| p.size_bytes as u64 * 8).sum();
        if bits > 0 {
            self.log.record_bits(now_ms, bits);
        }
        out
    }
}

fn d1400() -> u32 {
    1400
}
fn d_cwnd() -> f64 {
    10.0
}
fn d_ai() -> f64 {
    1.0
}
fn d_md() -> f64 {
    0.5
}
fn d_rto() -> f64 {
    300.0
}
fn d30() -> u32 {
    30
}
fn dburst() -> f64 {
    2000.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BackgroundModel {
    /// Window-based elephant: additive increase per RTT, multiplicative
    /// decrease on loss.
    BulkAimd {
        #[serde(default = "d_cwnd")]
        initial_cwnd_pkts: f64,
        #[serde(default = "d_ai")]
        additive_increase_per_rtt: f64,
        #[serde(default = "d_md")]
        multiplicative_decrease: f64,
        #[serde(default = "d_rto")]
        rto_ms: f64,
    },
    /// Short bursts well below the elephant detection threshold.
    LightWeb {
        #[serde(default = "d30")]
        burst_pkts: u32,
        #[serde(default = "dburst")]
        burst_interval_ms: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackgroundSourceConfig {
    #[serde(flatten)]
    pub model: BackgroundModel,
    #[serde(default)]
    pub start_ms: f64,
    #[serde(default = "d1400")]
    pub pkt_bytes: u32,
}

impl BackgroundSourceConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.model {
            BackgroundModel::BulkAimd { initial_cwnd_pkts, multiplicative_decrease, rto_ms, .. } => {
                if *initial_cwnd_pkts < 1.0 {
                    return Err(Error::InvalidConfig("initial_cwnd_pkts must be >= 1".into()));
                }
                if !(0.0..1.0).contains(multiplicative_decrease) {
                    return Err(Error::InvalidConfig("multiplicative_decrease must be in (0, 1)".into()));
                }
                if *rto_ms <= 0.0 {
                    return Err(Error::InvalidConfig("rto_ms must be positive".into()));
                }
            }
            BackgroundModel::LightWeb { burst_pkts, burst_interval_ms } => {
                if *burst_pkts == 0 || *burst_interval_ms <= 0.0 {
                    return Err(Error::InvalidConfig("light web burst parameters must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// One background sender. AIMD state is advanced by acked packets and
/// loss events supplied by the environment.
pub struct BackgroundSource {
    pub cfg: BackgroundSourceConfig,
    pub flow: FlowId,
    pub cwnd_pkts: f64,
    in_flight: u32,
    sent_any: bool,
    recovery_until_ms: f64,
    next_burst_ms: f64,
    seq: u64,
}

impl BackgroundSource {
    pub fn new(cfg: BackgroundSourceConfig, flow: FlowId) -> Result<Self> {
        cfg.validate()?;
        let cwnd = match cfg.model {
            BackgroundModel::BulkAimd { initial_cwnd_pkts, .. } => initial_cwnd_pkts,
            BackgroundModel::LightWeb { .. } => 0.0,
        };
        let next_burst_ms = cfg.start_ms;
        Ok(BackgroundSource {
            cfg,
            flow,
            cwnd_pkts: cwnd,
            in_flight: 0,
            sent_any: false,
            recovery_until_ms: f64::NEG_INFINITY,
            next_burst_ms,
            seq: 0,
        })
    }

    pub fn rto_ms(&self) -> f64 {
        match self.cfg.model {
            BackgroundModel::BulkAimd { rto_ms, .. } => rto_ms,
            BackgroundModel::LightWeb { .. } => f64::INFINITY,
        }
    }

    fn packet(&mut self, ids: &mut IdGen, now_ms: f64) -> SimPacket {
        let is_syn = !self.sent_any;
        self.sent_any = true;
        self.seq += 1;
        SimPacket {
            id: ids.next(),
            ue: self.flow.ue,
            direction: self.flow.direction,
            size_bytes: self.cfg.pkt_bytes,
            kind: SubflowKind::Background,
            rtp: None,
            transport: Transport {
                src_port: 20_000 + self.flow.index as u16,
                dst_port: 443,
                is_syn,
                is_large_data: self.cfg.pkt_bytes >= 1000,
            },
            zoom_pkt_type: None,
            stamps: Stamps { app_emit_ms: Some(now_ms), ..Default::default() },
            priority: Priority::Low,
        }
    }

    /// Advance the sender: absorb acks and losses, then emit whatever the
    /// window (or burst schedule) allows.
    pub fn step(
        &mut self,
        now_ms: f64,
        acked_pkts: u32,
        loss_events: u32,
        ids: &mut IdGen,
    ) -> Vec<SimPacket> {
        let mut out = Vec::new();
        if now_ms < self.cfg.start_ms {
            return out;
        }
        match self.cfg.model {
            BackgroundModel::BulkAimd {
                additive_increase_per_rtt, multiplicative_decrease, rto_ms, ..
            } => {
                self.in_flight = self.in_flight.saturating_sub(acked_pkts);
                if acked_pkts > 0 {
                    // Reno-style growth: +additive per full window of acks.
                    self.cwnd_pkts +=
                        additive_increase_per_rtt * acked_pkts as f64 / self.cwnd_pkts.max(1.0);
                }
                if loss_events > 0 && now_ms >= self.recovery_until_ms {
                    self.cwnd_pkts = (self.cwnd_pkts * multiplicative_decrease).max(1.0);
                    self.recovery_until_ms = now_ms + rto_ms;
                }
                self.in_flight = self.in_flight.saturating_sub(loss_events);
                while (self.in_flight as f64) < self.cwnd_pkts.floor() {
                    let pkt = self.packet(ids, now_ms);
                    self.in_flight += 1;
                    out.push(pkt);
                }
            }
            BackgroundModel::LightWeb { burst_pkts, burst_interval_ms } => {
                while self.next_burst_ms <= now_ms + 1e-9 {
                    for _ in 0..burst_pkts {
                        let pkt = self.packet(ids, self.next_burst_ms);
                        out.push(pkt);
                    }
                    self.next_burst_ms += burst_interval_ms;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(direction: Direction) -> FlowId {
        FlowId { ue: 1, direction, index: 0 }
    }

    fn run_source(cfg: ZoomSourceConfig, feedback: ZoomFeedback, ms: u64) -> (ZoomSource, Vec<SimPacket>) {
        let mut src = ZoomSource::new(cfg, flow(Direction::Downlink)).unwrap();
        let mut ids = IdGen::new();
        let mut all = Vec::new();
        for t in 0..ms {
            all.extend(src.step(t as f64, &feedback, &mut ids));
        }
        (src, all)
    }

    #[test]
    fn full_rate_hits_fps_targets() {
        let (_, pkts) = run_source(ZoomSourceConfig::default(), ZoomFeedback::default(), 5000);
        let in_window = |p: &&SimPacket| {
            let t = p.stamps.app_emit_ms.unwrap();
            (1000.0..4000.0).contains(&t)
        };
        let base_frames: std::collections::BTreeSet<u64> = pkts
            .iter()
            .filter(in_window)
            .filter(|p| p.kind == SubflowKind::Base)
            .map(|p| p.rtp.unwrap().frame_id)
            .collect();
        let enh_frames: std::collections::BTreeSet<u64> = pkts
            .iter()
            .filter(in_window)
            .filter(|p| p.kind == SubflowKind::HighFpsEnhancement)
            .map(|p| p.rtp.unwrap().frame_id)
            .collect();
        let base_fps = base_frames.len() as f64 / 3.0;
        let enh_fps = enh_frames.len() as f64 / 3.0;
        assert!((base_fps - 8.0).abs() <= 1.0, "base fps {base_fps}");
        assert!((enh_fps - 16.0).abs() <= 1.5, "enh fps {enh_fps}");
    }

    #[test]
    fn zero_delivery_ratio_suppresses_enhancement_first() {
        let feedback = ZoomFeedback { probe_delivery_ratio: 0.0, recent_delay_ms: 0.0 };
        let (_, pkts) = run_source(ZoomSourceConfig::default(), feedback, 5000);
        let enh = pkts.iter().filter(|p| p.kind == SubflowKind::HighFpsEnhancement).count();
        assert_eq!(enh, 0, "curve minimum 0.3 -> budget 7.2 fps, all base");
        let base_frames: std::collections::BTreeSet<u64> = pkts
            .iter()
            .filter(|p| p.kind == SubflowKind::Base)
            .map(|p| p.rtp.unwrap().frame_id)
            .collect();
        assert!(base_frames.len() > 20, "base layer preserved preferentially");
    }

    #[test]
    fn probes_present_during_ramp() {
        let (_, pkts) = run_source(ZoomSourceConfig::default(), ZoomFeedback::default(), 2000);
        let probes: Vec<&SimPacket> = pkts.iter().filter(|p| p.kind == SubflowKind::Probe).collect();
        assert!(!probes.is_empty());
        assert!(probes.iter().all(|p| p.size_bytes > 1000));
        let ramp_probes = probes
            .iter()
            .filter(|p| p.stamps.app_emit_ms.unwrap() < 2000.0)
            .count();
        // 25 pps over 2 s.
        assert!((45..=55).contains(&ramp_probes), "{ramp_probes}");
    }

    #[test]
    fn svc_dependency_no_orphan_enhancement() {
        // Oscillating feedback cannot produce an enhancement frame without
        // a preceding fresh base frame.
        let mut src = ZoomSource::new(ZoomSourceConfig::default(), flow(Direction::Uplink)).unwrap();
        let mut ids = IdGen::new();
        let mut last_base_ms = None;
        for t in 0..8000u64 {
            let ratio = if (t / 500) % 2 == 0 { 1.0 } else { 0.0 };
            let fb = ZoomFeedback { probe_delivery_ratio: ratio, recent_delay_ms: 0.0 };
            for p in src.step(t as f64, &fb, &mut ids) {
                match p.kind {
                    SubflowKind::Base => last_base_ms = Some(t as f64),
                    SubflowKind::HighFpsEnhancement => {
                        let anchor = last_base_ms.expect("enhancement before any base frame");
                        assert!(t as f64 - anchor <= 250.0 + 1e-6);
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn send_rate_monotone_in_delivery_ratio() {
        let mut rates = Vec::new();
        for ratio in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let feedback = ZoomFeedback { probe_delivery_ratio: ratio, recent_delay_ms: 0.0 };
            let (src, _) = run_source(ZoomSourceConfig::default(), feedback, 10_000);
            rates.push(src.log.mean_send_rate_bps(3000.0, 10_000.0));
        }
        for w in rates.windows(2) {
            assert!(w[1] >= w[0] - 1e-6, "rates {rates:?}");
        }
    }

    #[test]
    fn rtp_timestamps_follow_frame_clock() {
        let (src, _) = run_source(ZoomSourceConfig::default(), ZoomFeedback::default(), 3000);
        let emitted: Vec<&FrameRecord> = src.log.frames.iter().filter(|f| f.emitted).collect();
        assert!(emitted.len() > 10);
        let tick = 33.0 * 90.0; // frame interval x 90 kHz in ticks
        for w in emitted.windows(2) {
            let dt_ticks = (w[1].rtp_timestamp - w[0].rtp_timestamp) as f64;
            let gaps = (w[1].frame_id - w[0].frame_id) as f64;
            assert!((dt_ticks - gaps * tick).abs() <= 2.0, "{dt_ticks} vs {gaps} frames");
        }
    }

    #[test]
    fn ground_truth_frames_unique_and_complete() {
        let (src, _) = run_source(ZoomSourceConfig::default(), ZoomFeedback::default(), 2000);
        let mut seen = std::collections::BTreeSet::new();
        for f in &src.log.frames {
            assert!(seen.insert(f.frame_id), "duplicate frame record");
        }
        assert_eq!(seen.len(), src.log.frames.len());
    }

    #[test]
    fn aimd_growth_and_halving() {
        let cfg = BackgroundSourceConfig {
            model: BackgroundModel::BulkAimd {
                initial_cwnd_pkts: 10.0,
                additive_increase_per_rtt: 1.0,
                multiplicative_decrease: 0.5,
                rto_ms: 300.0,
            },
            start_ms: 0.0,
            pkt_bytes: 1400,
        };
        let mut src = BackgroundSource::new(cfg, flow(Direction::Downlink)).unwrap();
        let mut ids = IdGen::new();
        // 10 loss-free RTTs from window 10: ack a full window per RTT.
        let mut t = 0.0;
        src.step(t, 0, 0, &mut ids);
        for _ in 0..10 {
            t += 100.0;
            let w = src.cwnd_pkts.floor() as u32;
            src.step(t, w, 0, &mut ids);
        }
        assert!((src.cwnd_pkts - 20.0).abs() < 0.2, "cwnd {}", src.cwnd_pkts);

        // One loss at window 20 halves to 10.
        src.cwnd_pkts = 20.0;
        src.step(t + 100.0, 0, 1, &mut ids);
        assert!((src.cwnd_pkts - 10.0).abs() < 1e-9);
        // Further losses inside the recovery window are ignored.
        src.step(t + 150.0, 0, 1, &mut ids);
        assert!((src.cwnd_pkts - 10.0).abs() < 1e-9);
    }

    #[test]
    fn aimd_first_packet_carries_syn() {
        let cfg = BackgroundSourceConfig {
            model: BackgroundModel::BulkAimd {
                initial_cwnd_pkts: 4.0,
                additive_increase_per_rtt: 1.0,
                multiplicative_decrease: 0.5,
                rto_ms: 300.0,
            },
            start_ms: 0.0,
            pkt_bytes: 1400,
        };
        let mut src = BackgroundSource::new(cfg, flow(Direction::Uplink)).unwrap();
        let mut ids = IdGen::new();
        let pkts = src.step(0.0, 0, 0, &mut ids);
        assert!(pkts[0].transport.is_syn);
        assert!(pkts[1..].iter().all(|p| !p.transport.is_syn));
    }

    #[test]
    fn light_web_stays_below_elephant_threshold() {
        let cfg = BackgroundSourceConfig {
            model: BackgroundModel::LightWeb { burst_pkts: 30, burst_interval_ms: 2000.0 },
            start_ms: 0.0,
            pkt_bytes: 1400,
        };
        let mut src = BackgroundSource::new(cfg, flow(Direction::Downlink)).unwrap();
        let mut ids = IdGen::new();
        let mut emits: Vec<f64> = Vec::new();
        for t in 0..10_000u64 {
            for p in src.step(t as f64, 0, 0, &mut ids) {
                if p.transport.is_large_data {
                    emits.push(p.stamps.app_emit_ms.unwrap());
                }
            }
        }
        // No sliding 1 s window contains more than 40 large packets.
        for &t in &emits {
            let count = emits.iter().filter(|&&x| x >= t && x < t + 1000.0).count();
            assert!(count <= 40, "window at {t} has {count}");
        }
    }

    #[test]
    fn piecewise_linear_eval() {
        let pl = default_rate_curve();
        assert_eq!(pl.eval(-1.0), 0.3);
        assert_eq!(pl.eval(0.0), 0.3);
        assert!((pl.eval(0.25) - 0.45).abs() < 1e-12);
        assert!((pl.eval(0.75) - 0.8).abs() < 1e-12);
        assert_eq!(pl.eval(1.0), 1.0);
        assert_eq!(pl.eval(2.0), 1.0);
        assert!(pl.is_monotone_non_decreasing());
        assert!(default_congestion_backoff().is_monotone_non_increasing());
    }
}
