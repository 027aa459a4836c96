//! In-RAN observer: per-subflow FPS from complete frames, downlink frame
//! delay via the HARQ-ACK offset, uplink delay from RTP timestamps
//! against a minimum-offset baseline, offered-load tracking in both
//! directions (BSR inference on the uplink), bandwidth-hungry detection,
//! and periodic report assembly.

use std::collections::{BTreeMap, VecDeque};

use crate::controller::{FlowId, QoeState, SubflowLoads};
use crate::packet::{rtp_ts_to_ms, Direction, RtpTimestampUnwrapper, SimPacket, SubflowKind, UeId};
use crate::ran::{snr_to_link, Bsr, Lcg, McsRow};

pub const DEFAULT_EWMA_ALPHA: f64 = 0.2;
pub const RAN_WINDOW_MS: f64 = 50.0;
pub const MEDIA_WINDOW_MS: f64 = 1000.0;
pub const BW_HUNGRY_LARGE_BYTES: u32 = 1000;
pub const BW_HUNGRY_PKTS_PER_SEC: usize = 50;
pub const BW_HUNGRY_MIN_AGE_MS: f64 = 2000.0;
/// Cap on the queue-age fallback used when a delay window has no samples.
const DELAY_FALLBACK_CAP_MS: f64 = 1000.0;
const STALE_FRAME_MS: f64 = 5000.0;

/// Downlink frame sojourn: last delivery (ACK time minus the k1 offset)
/// minus first SDAP ingress.
pub fn dl_frame_delay_ms(min_ingress_ms: f64, max_ack_ms: f64, k1_slots: u32, slot_ms: f64) -> f64 {
    (max_ack_ms - k1_slots as f64 * slot_ms) - min_ingress_ms
}

/// Minimum-offset baseline for uplink delay estimation. The baseline
/// never increases, so the returned extra delay is always >= 0.
#[derive(Debug, Default, Clone)]
pub struct UlDelayBaseline {
    min_offset_ms: Option<f64>,
}

impl UlDelayBaseline {
    pub fn observe(&mut self, arrival_ms: f64, rtp_ms: f64) -> f64 {
        let offset = arrival_ms - rtp_ms;
        let base = match self.min_offset_ms {
            None => offset,
            Some(b) => b.min(offset),
        };
        self.min_offset_ms = Some(base);
        offset - base
    }

    pub fn baseline(&self) -> Option<f64> {
        self.min_offset_ms
    }
}

/// Per-interval uplink arrival inference from consecutive BSRs:
/// `A = B2 - B1 + D1`. Negative values (queue drops or resets) are
/// retained.
pub fn bsr_arrival_delta(prev_bytes: u64, curr_bytes: u64, delivered_bytes: u64) -> i64 {
    curr_bytes as i64 - prev_bytes as i64 + delivered_bytes as i64
}

/// EWMA with the first raw sample as the initial state.
#[derive(Debug, Clone)]
pub struct Ewma {
    pub alpha: f64,
    state: Option<f64>,
}

impl Ewma {
    pub fn new(alpha: f64) -> Self {
        Ewma { alpha, state: None }
    }

    pub fn update(&mut self, raw: f64) -> f64 {
        let next = match self.state {
            None => raw,
            Some(prev) => self.alpha * raw + (1.0 - self.alpha) * prev,
        };
        self.state = Some(next);
        next
    }

    pub fn value(&self) -> Option<f64> {
        self.state
    }
}

/// Sticky elephant detection per connection: at least 2 s old and more
/// than 50 large packets within some one-second window.
#[derive(Debug, Clone)]
pub struct ConnectionTracker {
    pub first_seen_ms: f64,
    large_times: VecDeque<f64>,
    pub hungry: bool,
}

impl ConnectionTracker {
    pub fn new(first_seen_ms: f64) -> Self {
        ConnectionTracker { first_seen_ms, large_times: VecDeque::new(), hungry: false }
    }

    pub fn observe(&mut self, now_ms: f64, size_bytes: u32) -> bool {
        if size_bytes >= BW_HUNGRY_LARGE_BYTES {
            self.large_times.push_back(now_ms);
        }
        while let Some(&t) = self.large_times.front() {
            if now_ms - t > 1000.0 {
                self.large_times.pop_front();
            } else {
                break;
            }
        }
        if !self.hungry
            && now_ms - self.first_seen_ms >= BW_HUNGRY_MIN_AGE_MS
            && self.large_times.len() > BW_HUNGRY_PKTS_PER_SEC
        {
            self.hungry = true;
        }
        self.hungry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VideoLayer {
    Base,
    Enhancement,
}

#[derive(Debug)]
struct FrameProgress {
    layer: VideoLayer,
    expected: u32,
    delivered: u32,
    last_seen: bool,
    min_ingress_ms: f64,
    max_knowledge_ms: f64,
    last_pkt_extra_delay_ms: f64,
    rtp_ms: f64,
}

#[derive(Debug, Clone, Copy)]
struct CompletedFrame {
    knowledge_ms: f64,
    layer: VideoLayer,
    delay_ms: f64,
}

#[derive(Debug)]
struct FlowMonitor {
    flow: FlowId,
    first_seen_ms: f64,
    frames: BTreeMap<u64, FrameProgress>,
    completed: VecDeque<CompletedFrame>,
    audio_samples: VecDeque<(f64, f64)>,
    audio_outstanding: BTreeMap<u64, f64>,
    load_buckets: BTreeMap<SubflowKind, VecDeque<(f64, u64)>>,
    smoothed_loads: BTreeMap<SubflowKind, Ewma>,
    ul_baseline_video: UlDelayBaseline,
    ul_baseline_audio: UlDelayBaseline,
    unwrap_video: RtpTimestampUnwrapper,
    unwrap_audio: RtpTimestampUnwrapper,
    last_ul_delays: QoeState,
}

impl FlowMonitor {
    fn new(flow: FlowId, now_ms: f64) -> Self {
        FlowMonitor {
            flow,
            first_seen_ms: now_ms,
            frames: BTreeMap::new(),
            completed: VecDeque::new(),
            audio_samples: VecDeque::new(),
            audio_outstanding: BTreeMap::new(),
            load_buckets: BTreeMap::new(),
            smoothed_loads: BTreeMap::new(),
            ul_baseline_video: UlDelayBaseline::default(),
            ul_baseline_audio: UlDelayBaseline::default(),
            unwrap_video: RtpTimestampUnwrapper::new(),
            unwrap_audio: RtpTimestampUnwrapper::new(),
            last_ul_delays: QoeState::default(),
        }
    }

    fn record_load(&mut self, kind: SubflowKind, now_ms: f64, bytes: u32) {
        let buf = self.load_buckets.entry(kind).or_default();
        buf.push_back((now_ms, bytes as u64));
        while let Some(&(t, _)) = buf.front() {
            if now_ms - t > MEDIA_WINDOW_MS {
                buf.pop_front();
            } else {
                break;
            }
        }
    }

    fn window_load_bps(&self, kind: SubflowKind, now_ms: f64) -> f64 {
        self.load_buckets
            .get(&kind)
            .map(|buf| {
                buf.iter()
                    .filter(|(t, _)| now_ms - t <= MEDIA_WINDOW_MS)
                    .map(|(_, b)| *b)
                    .sum::<u64>() as f64
                    * 8.0
                    / (MEDIA_WINDOW_MS / 1000.0)
            })
            .unwrap_or(0.0)
    }

    fn layer_of(kind: SubflowKind) -> Option<VideoLayer> {
        match kind {
            SubflowKind::Base => Some(VideoLayer::Base),
            k if k.is_enhancement() => Some(VideoLayer::Enhancement),
            _ => None,
        }
    }

    fn frame_entry(&mut self, frame_id: u64, layer: VideoLayer, ingress_ms: f64) -> &mut FrameProgress {
        self.frames.entry(frame_id).or_insert(FrameProgress {
            layer,
            expected: 0,
            delivered: 0,
            last_seen: false,
            min_ingress_ms: ingress_ms,
            max_knowledge_ms: 0.0,
            last_pkt_extra_delay_ms: 0.0,
            rtp_ms: 0.0,
        })
    }

    fn try_complete(&mut self, frame_id: u64) {
        let done = {
            let Some(p) = self.frames.get(&frame_id) else { return };
            p.last_seen && p.expected > 0 && p.delivered == p.expected
        };
        if done {
            let p = self.frames.remove(&frame_id).unwrap();
            let delay = match self.flow.direction {
                Direction::Downlink => p.max_knowledge_ms.max(p.min_ingress_ms) - p.min_ingress_ms,
                Direction::Uplink => p.last_pkt_extra_delay_ms,
            };
            self.completed.push_back(CompletedFrame {
                knowledge_ms: p.max_knowledge_ms,
                layer: p.layer,
                delay_ms: delay,
            });
        }
    }

    fn prune(&mut self, now_ms: f64) {
        while let Some(f) = self.completed.front() {
            if now_ms - f.knowledge_ms > MEDIA_WINDOW_MS {
                self.completed.pop_front();
            } else {
                break;
            }
        }
        while let Some(&(t, _)) = self.audio_samples.front() {
            if now_ms - t > MEDIA_WINDOW_MS {
                self.audio_samples.pop_front();
            } else {
                break;
            }
        }
        self.frames.retain(|_, p| now_ms - p.min_ingress_ms <= STALE_FRAME_MS);
        self.audio_outstanding.retain(|_, t| now_ms - *t <= STALE_FRAME_MS);
    }

    fn fps(&self, layer: VideoLayer, now_ms: f64) -> f64 {
        self.completed
            .iter()
            .filter(|f| f.layer == layer && now_ms - f.knowledge_ms <= MEDIA_WINDOW_MS)
            .count() as f64
            / (MEDIA_WINDOW_MS / 1000.0)
    }

    fn mean_delay(&self, layer: VideoLayer, now_ms: f64) -> Option<f64> {
        let samples: Vec<f64> = self
            .completed
            .iter()
            .filter(|f| f.layer == layer && now_ms - f.knowledge_ms <= MEDIA_WINDOW_MS)
            .map(|f| f.delay_ms)
            .collect();
        if samples.is_empty() {
            None
        } else {
            Some(samples.iter().sum::<f64>() / samples.len() as f64)
        }
    }

    /// When a window has no completed samples, the age of the oldest
    /// outstanding frame stands in for the (still growing) delay.
    fn outstanding_age(&self, layer: VideoLayer, now_ms: f64) -> Option<f64> {
        self.frames
            .values()
            .filter(|p| p.layer == layer)
            .map(|p| now_ms - p.min_ingress_ms)
            .fold(None, |acc: Option<f64>, age| Some(acc.map_or(age, |a| a.max(age))))
            .map(|a| a.min(DELAY_FALLBACK_CAP_MS))
    }

    fn audio_delay(&self, now_ms: f64) -> f64 {
        let samples: Vec<f64> = self
            .audio_samples
            .iter()
            .filter(|(t, _)| now_ms - t <= MEDIA_WINDOW_MS)
            .map(|(_, d)| *d)
            .collect();
        if !samples.is_empty() {
            return samples.iter().sum::<f64>() / samples.len() as f64;
        }
        match self.flow.direction {
            Direction::Downlink => self
                .audio_outstanding
                .values()
                .map(|t| now_ms - t)
                .fold(0.0f64, f64::max)
                .min(DELAY_FALLBACK_CAP_MS),
            // The gNB cannot see packets still buffered in the UE modem;
            // carry the last observed estimate.
            Direction::Uplink => self.last_ul_delays.audio_delay_ms,
        }
    }
}

#[derive(Debug)]
struct UeDirState {
    background_buckets: VecDeque<(f64, i64)>,
    smoothed_background: Ewma,
    hungry: bool,
}

impl UeDirState {
    fn new(alpha: f64) -> Self {
        UeDirState {
            background_buckets: VecDeque::new(),
            smoothed_background: Ewma::new(alpha),
            hungry: false,
        }
    }

    fn record(&mut self, now_ms: f64, delta_bytes: i64) {
        self.background_buckets.push_back((now_ms, delta_bytes));
        while let Some(&(t, _)) = self.background_buckets.front() {
            if now_ms - t > MEDIA_WINDOW_MS {
                self.background_buckets.pop_front();
            } else {
                break;
            }
        }
    }

    fn window_bps(&self, now_ms: f64) -> f64 {
        let sum: i64 = self
            .background_buckets
            .iter()
            .filter(|(t, _)| now_ms - t <= MEDIA_WINDOW_MS)
            .map(|(_, b)| *b)
            .sum();
        sum as f64 * 8.0 / (MEDIA_WINDOW_MS / 1000.0)
    }
}

#[derive(Debug)]
struct UeMonitor {
    ran_samples: VecDeque<(f64, f64, u8, u8)>,
    dl: UeDirState,
    ul: UeDirState,
    prev_bsr: BTreeMap<Lcg, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct ConnKey {
    ue: UeId,
    direction: Direction,
    src_port: u16,
    dst_port: u16,
}

/// One row of the BSR inference log.
#[derive(Debug, Clone, Copy)]
pub struct BsrInferenceRow {
    pub now_ms: f64,
    pub ue: UeId,
    pub lcg: Lcg,
    pub reported_bytes: u64,
    pub delivered_since_prev: u64,
    pub inferred_arrival_bytes: Option<i64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UeDirReport {
    pub background_bps: f64,
    pub bw_hungry: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UeReport {
    pub snr_db_mean: f64,
    pub cqi_mean: f64,
    pub mcs_mean: f64,
    pub bits_per_prb: f64,
    pub dl: UeDirReport,
    pub ul: UeDirReport,
}

#[derive(Debug, Clone, Default)]
pub struct FlowReport {
    pub qoe: QoeState,
    pub loads: SubflowLoads,
    pub age_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MonitorReport {
    pub interval: u64,
    pub now_ms: f64,
    pub flows: BTreeMap<FlowId, FlowReport>,
    pub ues: BTreeMap<UeId, UeReport>,
}

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub ewma_alpha: f64,
    pub video_sample_rate_hz: f64,
    pub audio_sample_rate_hz: f64,
    pub k1_slots: u32,
    pub slot_ms: f64,
    pub mcs_table: Vec<McsRow>,
}

/// The observer owned by the slot loop; read-only snapshots go to the
/// controller by value.
pub struct Monitor {
    cfg: MonitorConfig,
    flows: BTreeMap<FlowId, FlowMonitor>,
    ues: BTreeMap<UeId, UeMonitor>,
    connections: BTreeMap<ConnKey, ConnectionTracker>,
    interval: u64,
    pub bsr_log: Vec<BsrInferenceRow>,
}

impl Monitor {
    pub fn new(cfg: MonitorConfig) -> Self {
        Monitor {
            cfg,
            flows: BTreeMap::new(),
            ues: BTreeMap::new(),
            connections: BTreeMap::new(),
            interval: 0,
            bsr_log: Vec::new(),
        }
    }

    fn flow_entry(&mut self, flow: FlowId, now_ms: f64) -> &mut FlowMonitor {
        self.flows.entry(flow).or_insert_with(|| FlowMonitor::new(flow, now_ms))
    }

    fn ue_entry(&mut self, ue: UeId) -> &mut UeMonitor {
        let alpha = self.cfg.ewma_alpha;
        self.ues.entry(ue).or_insert_with(|| UeMonitor {
            ran_samples: VecDeque::new(),
            dl: UeDirState::new(alpha),
            ul: UeDirState::new(alpha),
            prev_bsr: BTreeMap::new(),
        })
    }

    fn track_connection(&mut self, pkt: &SimPacket, now_ms: f64) {
        let key = ConnKey {
            ue: pkt.ue,
            direction: pkt.direction,
            src_port: pkt.transport.src_port,
            dst_port: pkt.transport.dst_port,
        };
        if pkt.transport.is_syn {
            self.connections.entry(key).or_insert_with(|| ConnectionTracker::new(now_ms));
        }
        if let Some(conn) = self.connections.get_mut(&key) {
            let hungry = conn.observe(now_ms, pkt.size_bytes);
            if hungry {
                let dir = pkt.direction;
                let ue = self.ue_entry(pkt.ue);
                match dir {
                    Direction::Downlink => ue.dl.hungry = true,
                    Direction::Uplink => ue.ul.hungry = true,
                }
            }
        }
    }

    /// Downlink SDAP ingress tap, called before any drop decision so
    /// offered load reflects demand.
    pub fn on_dl_ingress(&mut self, flow: Option<FlowId>, pkt: &SimPacket, now_ms: f64) {
        self.track_connection(pkt, now_ms);
        match flow {
            Some(flow) => {
                let fm = self.flow_entry(flow, now_ms);
                fm.record_load(pkt.kind, now_ms, pkt.size_bytes);
                if let Some(layer) = FlowMonitor::layer_of(pkt.kind) {
                    let rtp = pkt.rtp.expect("video packets carry rtp");
                    let entry = fm.frame_entry(rtp.frame_id, layer, now_ms);
                    entry.expected += 1;
                    entry.min_ingress_ms = entry.min_ingress_ms.min(now_ms);
                    entry.last_seen |= rtp.last_of_frame;
                } else if pkt.kind == SubflowKind::Audio {
                    fm.audio_outstanding.insert(pkt.id, now_ms);
                }
            }
            None => {
                let ue = self.ue_entry(pkt.ue);
                ue.dl.record(now_ms, pkt.size_bytes as i64);
            }
        }
    }

    /// Downlink delivery, learned when the HARQ ACK arrives: the packet
    /// is known to have been received k1 slots before the ACK.
    pub fn on_dl_delivery(&mut self, flow: Option<FlowId>, pkt: &SimPacket) {
        let Some(flow) = flow else { return };
        let ack_ms = pkt.stamps.ack_ms.expect("delivered packets carry ack");
        let (k1, slot_ms) = (self.cfg.k1_slots, self.cfg.slot_ms);
        let fm = self.flow_entry(flow, ack_ms);
        if let Some(layer) = FlowMonitor::layer_of(pkt.kind) {
            let rtp = pkt.rtp.expect("video packets carry rtp");
            let ingress = pkt.stamps.sdap_ingress_ms.unwrap_or(ack_ms);
            let entry = fm.frame_entry(rtp.frame_id, layer, ingress);
            entry.delivered += 1;
            let deliver_ms = dl_frame_delay_ms(0.0, ack_ms, k1, slot_ms);
            let knowledge = ack_ms;
            entry.max_knowledge_ms = entry.max_knowledge_ms.max(knowledge);
            // Delay accumulates as (max deliver) - (min ingress); deliver
            // is reconstructed from the ACK.
            entry.last_pkt_extra_delay_ms = deliver_ms - entry.min_ingress_ms;
            fm.try_complete(rtp.frame_id);
        } else if pkt.kind == SubflowKind::Audio {
            let ingress = pkt.stamps.sdap_ingress_ms.unwrap_or(ack_ms);
            let delay = dl_frame_delay_ms(ingress, ack_ms, k1, slot_ms);
            fm.audio_samples.push_back((ack_ms, delay));
            fm.audio_outstanding.remove(&pkt.id);
        }
    }

    /// Uplink modem-ingress tap (the UE-side reporting shim): demand per
    /// conferencing subflow, measured before any shim drop.
    pub fn on_ul_modem_ingress(&mut self, flow: FlowId, pkt: &SimPacket, now_ms: f64) {
        let fm = self.flow_entry(flow, now_ms);
        fm.record_load(pkt.kind, now_ms, pkt.size_bytes);
    }

    /// Uplink arrival at the gNB PHY.
    pub fn on_ul_arrival(&mut self, flow: Option<FlowId>, pkt: &SimPacket, now_ms: f64) {
        self.track_connection(pkt, now_ms);
        let Some(flow) = flow else { return };
        let (video_rate, audio_rate) = (self.cfg.video_sample_rate_hz, self.cfg.audio_sample_rate_hz);
        let fm = self.flow_entry(flow, now_ms);
        if let Some(layer) = FlowMonitor::layer_of(pkt.kind) {
            let rtp = pkt.rtp.expect("video packets carry rtp");
            let ts = fm.unwrap_video.unwrap(rtp.timestamp);
            let rtp_ms = rtp_ts_to_ms(ts, video_rate).expect("configured rate is positive");
            let extra = fm.ul_baseline_video.observe(now_ms, rtp_ms);
            let entry = fm.frame_entry(rtp.frame_id, layer, now_ms);
            entry.expected += 1;
            entry.delivered += 1;
            entry.last_seen |= rtp.last_of_frame;
            entry.max_knowledge_ms = entry.max_knowledge_ms.max(now_ms);
            entry.rtp_ms = rtp_ms;
            if rtp.last_of_frame {
                // Frame-level variant: the last packet's extra delay.
                entry.last_pkt_extra_delay_ms = extra;
            }
            fm.try_complete(rtp.frame_id);
        } else if pkt.kind == SubflowKind::Audio {
            let rtp = pkt.rtp.expect("audio packets carry rtp");
            let ts = fm.unwrap_audio.unwrap(rtp.timestamp);
            let rtp_ms = rtp_ts_to_ms(ts, audio_rate).expect("configured rate is positive");
            let extra = fm.ul_baseline_audio.observe(now_ms, rtp_ms);
            fm.audio_samples.push_back((now_ms, extra));
        }
    }

    /// Per-packet uplink extra-delay estimate, exposed for verification.
    pub fn ul_packet_extra_delay(&mut self, flow: FlowId, pkt: &SimPacket, now_ms: f64) -> Option<f64> {
        let (video_rate, audio_rate) = (self.cfg.video_sample_rate_hz, self.cfg.audio_sample_rate_hz);
        let fm = self.flow_entry(flow, now_ms);
        let rtp = pkt.rtp?;
        let (unwrapper, baseline, rate) = match pkt.kind {
            SubflowKind::Audio => (&mut fm.unwrap_audio, &mut fm.ul_baseline_audio, audio_rate),
            k if k.is_video() => (&mut fm.unwrap_video, &mut fm.ul_baseline_video, video_rate),
            _ => return None,
        };
        let ts = unwrapper.unwrap(rtp.timestamp);
        let rtp_ms = rtp_ts_to_ms(ts, rate).ok()?;
        Some(baseline.observe(now_ms, rtp_ms))
    }

    /// Ingest one BSR: infer per-group arrivals from the report delta and
    /// the bytes delivered since the previous report.
    pub fn on_bsr(&mut self, bsr: &Bsr) {
        let ue = self.ue_entry(bsr.ue);
        for lcg in Lcg::ALL {
            let reported = bsr.reported_bytes[&lcg];
            let delivered = bsr.delivered_since_prev[&lcg];
            let inferred = ue
                .prev_bsr
                .get(&lcg)
                .map(|prev| bsr_arrival_delta(*prev, reported, delivered));
            if let Some(a) = inferred {
                if lcg == Lcg::Background {
                    ue.ul.record(bsr.now_ms, a);
                }
            }
            ue.prev_bsr.insert(lcg, reported);
            self.bsr_log.push(BsrInferenceRow {
                now_ms: bsr.now_ms,
                ue: bsr.ue,
                lcg,
                reported_bytes: reported,
                delivered_since_prev: delivered,
                inferred_arrival_bytes: inferred,
            });
        }
    }

    /// RAN-layer sample, once per slot per UE.
    pub fn on_ran_sample(&mut self, ue: UeId, now_ms: f64, snr_db: f64, cqi: u8, mcs: u8) {
        let m = self.ue_entry(ue);
        m.ran_samples.push_back((now_ms, snr_db, cqi, mcs));
        while let Some(&(t, ..)) = m.ran_samples.front() {
            if now_ms - t > RAN_WINDOW_MS {
                m.ran_samples.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn flow_age_ms(&self, flow: FlowId, now_ms: f64) -> Option<f64> {
        self.flows.get(&flow).map(|f| now_ms - f.first_seen_ms)
    }

    /// Assemble the per-interval report. Raw window measurements are
    /// EWMA-smoothed here, once per interval.
    pub fn snapshot(&mut self, now_ms: f64) -> MonitorReport {
        let alpha = self.cfg.ewma_alpha;
        let mut report = MonitorReport {
            interval: self.interval,
            now_ms,
            flows: BTreeMap::new(),
            ues: BTreeMap::new(),
        };
        self.interval += 1;

        for (id, fm) in self.flows.iter_mut() {
            fm.prune(now_ms);
            let base_fps = fm.fps(VideoLayer::Base, now_ms);
            let enh_fps = fm.fps(VideoLayer::Enhancement, now_ms);
            let delay_of = |fm: &FlowMonitor, layer: VideoLayer, last: f64| {
                fm.mean_delay(layer, now_ms)
                    .or_else(|| fm.outstanding_age(layer, now_ms))
                    .unwrap_or(match id.direction {
                        Direction::Downlink => 0.0,
                        Direction::Uplink => last,
                    })
            };
            let base_delay = delay_of(fm, VideoLayer::Base, fm.last_ul_delays.base_delay_ms);
            let enh_delay = delay_of(fm, VideoLayer::Enhancement, fm.last_ul_delays.enh_delay_ms);
            let audio_delay = fm.audio_delay(now_ms);
            let qoe = QoeState {
                base_fps,
                enh_fps,
                base_delay_ms: base_delay,
                enh_delay_ms: enh_delay,
                audio_delay_ms: audio_delay,
            };
            fm.last_ul_delays = qoe;

            let mut loads = SubflowLoads::default();
            for (kind, slot) in [
                (SubflowKind::Base, 0usize),
                (SubflowKind::HighFpsEnhancement, 1),
                (SubflowKind::LowFpsEnhancement, 1),
                (SubflowKind::SmallWindowVideo, 1),
                (SubflowKind::Audio, 2),
                (SubflowKind::Probe, 3),
                (SubflowKind::Control, 4),
            ] {
                let raw = fm.window_load_bps(kind, now_ms);
                let smoothed = fm
                    .smoothed_loads
                    .entry(kind)
                    .or_insert_with(|| Ewma::new(alpha))
                    .update(raw)
                    .max(0.0);
                match slot {
                    0 => loads.base_bps += smoothed,
                    1 => loads.enh_bps += smoothed,
                    2 => loads.audio_bps += smoothed,
                    3 => loads.probe_bps += smoothed,
                    _ => loads.control_bps += smoothed,
                }
            }

            report.flows.insert(
                *id,
                FlowReport { qoe, loads, age_ms: now_ms - fm.first_seen_ms },
            );
        }

        for (id, um) in self.ues.iter_mut() {
            let n = um.ran_samples.len().max(1) as f64;
            let snr = um.ran_samples.iter().map(|(_, s, ..)| *s).sum::<f64>() / n;
            let cqi = um.ran_samples.iter().map(|(_, _, c, _)| *c as f64).sum::<f64>() / n;
            let mcs = um.ran_samples.iter().map(|(_, _, _, m)| *m as f64).sum::<f64>() / n;
            let bits_per_prb = if um.ran_samples.is_empty() {
                0.0
            } else {
                snr_to_link(&self.cfg.mcs_table, snr).map(|l| l.bits_per_prb as f64).unwrap_or(0.0)
            };
            let dl_bps = um.dl.smoothed_background.update(um.dl.window_bps(now_ms)).max(0.0);
            let ul_bps = um.ul.smoothed_background.update(um.ul.window_bps(now_ms)).max(0.0);
            report.ues.insert(
                *id,
                UeReport {
                    snr_db_mean: snr,
                    cqi_mean: cqi,
                    mcs_mean: mcs,
                    bits_per_prb,
                    dl: UeDirReport { background_bps: dl_bps, bw_hungry: um.dl.hungry },
                    ul: UeDirReport { background_bps: ul_bps, bw_hungry: um.ul.hungry },
                },
            );
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{Priority, RtpHeader, Stamps, Transport};
    use crate::ran::default_mcs_table;

    fn cfg() -> MonitorConfig {
        MonitorConfig {
            ewma_alpha: DEFAULT_EWMA_ALPHA,
            video_sample_rate_hz: 90_000.0,
            audio_sample_rate_hz: 48_000.0,
            k1_slots: 4,
            slot_ms: 1.0,
            mcs_table: default_mcs_table(),
        }
    }

    fn flow(direction: Direction) -> FlowId {
        FlowId { ue: 1, direction, index: 0 }
    }

    fn video_pkt(
        id: u64,
        direction: Direction,
        frame_id: u64,
        kind: SubflowKind,
        last: bool,
        ts: u32,
    ) -> SimPacket {
        SimPacket {
            id,
            ue: 1,
            direction,
            size_bytes: 600,
            kind,
            rtp: Some(RtpHeader {
                timestamp: ts,
                sequence: id as u16,
                frame_id,
                last_of_frame: last,
                extension_data: [0x50, 0, 0],
            }),
            transport: Transport { src_port: 8801, dst_port: 40000, ..Default::default() },
            zoom_pkt_type: Some(0x10),
            stamps: Stamps::default(),
            priority: Priority::High,
        }
    }

    #[test]
    fn dl_frame_delay_example() {
        // Ingress 100, ack 112, k1 = 4, slot 1 ms -> 8 ms.
        assert_eq!(dl_frame_delay_ms(100.0, 112.0, 4, 1.0), 8.0);
    }

    #[test]
    fn fps_counts_only_complete_frames() {
        let mut m = Monitor::new(cfg());
        let f = flow(Direction::Downlink);
        // 8 complete base frames within one second.
        let mut id = 0;
        for frame in 0..8u64 {
            let t0 = 100.0 + frame as f64 * 120.0;
            for k in 0..2 {
                let mut p = video_pkt(id, Direction::Downlink, frame, SubflowKind::Base, k == 1, 0);
                m.on_dl_ingress(Some(f), &p, t0);
                p.stamps.sdap_ingress_ms = Some(t0);
                p.stamps.phy_deliver_ms = Some(t0 + 2.0);
                p.stamps.ack_ms = Some(t0 + 6.0);
                m.on_dl_delivery(Some(f), &p);
                id += 1;
            }
        }
        // One incomplete frame: second packet never delivered.
        let t0 = 1060.0;
        let mut p = video_pkt(id, Direction::Downlink, 100, SubflowKind::Base, false, 0);
        m.on_dl_ingress(Some(f), &p, t0);
        p.stamps.sdap_ingress_ms = Some(t0);
        p.stamps.ack_ms = Some(t0 + 6.0);
        m.on_dl_delivery(Some(f), &p);
        let p2 = video_pkt(id + 1, Direction::Downlink, 100, SubflowKind::Base, true, 0);
        m.on_dl_ingress(Some(f), &p2, t0);

        let report = m.snapshot(1100.0);
        let fr = &report.flows[&f];
        assert_eq!(fr.qoe.base_fps, 8.0);
        assert_eq!(fr.qoe.enh_fps, 0.0);
    }

    #[test]
    fn fps_per_layer() {
        let mut m = Monitor::new(cfg());
        let f = flow(Direction::Uplink);
        let mut id = 0;
        // 8 base + 16 enhancement single-packet frames in one second.
        for frame in 0..24u64 {
            let kind = if frame % 3 == 0 { SubflowKind::Base } else { SubflowKind::HighFpsEnhancement };
            let t = 10.0 + frame as f64 * 41.0;
            let ts = (t * 90.0) as u32;
            let p = video_pkt(id, Direction::Uplink, frame, kind, true, ts);
            m.on_ul_arrival(Some(f), &p, t);
            id += 1;
        }
        let report = m.snapshot(1000.0);
        let fr = &report.flows[&f];
        assert_eq!(fr.qoe.base_fps, 8.0);
        assert_eq!(fr.qoe.enh_fps, 16.0);
    }

    #[test]
    fn ul_extra_delay_min_baseline() {
        let mut m = Monitor::new(cfg());
        let f = flow(Direction::Uplink);
        // Offsets 30, 40, 35 -> extra delays 0, 10, 5.
        let mut extras = Vec::new();
        for (i, (rtp_ms, arrival)) in [(0.0, 30.0), (20.0, 60.0), (40.0, 75.0)].iter().enumerate() {
            let ts = (rtp_ms * 90.0) as u32;
            let p = video_pkt(i as u64, Direction::Uplink, i as u64, SubflowKind::Base, true, ts);
            extras.push(m.ul_packet_extra_delay(f, &p, *arrival).unwrap());
        }
        assert_eq!(extras, vec![0.0, 10.0, 5.0]);
    }

    #[test]
    fn baseline_never_increases() {
        let mut b = UlDelayBaseline::default();
        let offsets = [50.0, 45.0, 60.0, 40.0, 80.0];
        let mut prev = f64::INFINITY;
        for (i, o) in offsets.iter().enumerate() {
            let extra = b.observe(100.0 * i as f64 + o, 100.0 * i as f64);
            assert!(extra >= 0.0);
            let base = b.baseline().unwrap();
            assert!(base <= prev);
            prev = base;
        }
    }

    #[test]
    fn bsr_inference_examples() {
        // B1 = 10 kB, D1 = 4 kB, B2 = 8 kB -> A = 2 kB.
        assert_eq!(bsr_arrival_delta(10_000, 8_000, 4_000), 2_000);
        // Capped reports: B1 = B2 = cap, D1 = 4 kB -> A = 4 kB.
        assert_eq!(bsr_arrival_delta(150_000, 150_000, 4_000), 4_000);
        // Queue reset: negative values retained.
        assert_eq!(bsr_arrival_delta(10_000, 0, 0), -10_000);
    }

    #[test]
    fn ewma_examples() {
        let mut e = Ewma::new(0.2);
        // s_0 is the first raw sample.
        assert_eq!(e.update(0.0), 0.0);
        let mut last = 0.0;
        for _ in 0..5 {
            last = e.update(1.0);
        }
        assert!((last - (1.0 - 0.8f64.powi(5))).abs() < 1e-12);

        // Alternating 0/1 settles inside (0.44, 0.56).
        let mut e = Ewma::new(0.2);
        let mut vals = Vec::new();
        for i in 0..200 {
            vals.push(e.update((i % 2) as f64));
        }
        for v in &vals[100..] {
            assert!((0.44..0.56).contains(v), "{v}");
        }

        // Constant input converges geometrically.
        let mut e = Ewma::new(0.2);
        e.update(10.0);
        let mut err = Vec::new();
        for _ in 0..4 {
            err.push((e.update(4.0) - 4.0).abs());
        }
        for w in err.windows(2) {
            assert!((w[1] / w[0] - 0.8).abs() < 1e-9);
        }
    }

    #[test]
    fn bw_hungry_age_gate() {
        let mut c = ConnectionTracker::new(0.0);
        // 100 large packets within the first second: age gate blocks.
        for i in 0..100 {
            assert!(!c.observe(i as f64 * 10.0, 1400));
        }
        // Sustained rate: flips hungry once 2 s old.
        let mut flipped = None;
        for i in 100..400 {
            let now = i as f64 * 10.0;
            if c.observe(now, 1400) && flipped.is_none() {
                flipped = Some(now);
            }
        }
        let t = flipped.expect("becomes hungry");
        assert!(t >= 2000.0);
        // Sticky afterwards even when traffic stops.
        assert!(c.observe(100_000.0, 40));
    }

    #[test]
    fn bw_hungry_needs_rate_above_threshold() {
        let mut c = ConnectionTracker::new(0.0);
        // 40 large packets per second forever: never hungry.
        for i in 0..400 {
            assert!(!c.observe(i as f64 * 25.0, 1400));
        }
    }

    #[test]
    fn idle_snapshot_is_zero() {
        let mut m = Monitor::new(cfg());
        m.on_ran_sample(1, 0.0, 10.0, 9, 16);
        let report = m.snapshot(50.0);
        let ue = &report.ues[&1];
        assert_eq!(ue.dl.background_bps, 0.0);
        assert!(!ue.dl.bw_hungry);
        assert!(report.flows.is_empty());
    }

    #[test]
    fn ran_window_mean_tracks_snr_step() {
        let mut m = Monitor::new(cfg());
        for t in 0..100 {
            let snr = if t < 50 { 4.0 } else { 20.0 };
            m.on_ran_sample(1, t as f64, snr, 6, 10);
        }
        let report = m.snapshot(100.0);
        // Only the trailing 50 ms window contributes.
        assert!((report.ues[&1].snr_db_mean - 20.0).abs() < 0.5);
    }
}
