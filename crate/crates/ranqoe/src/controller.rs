//! Closed-loop decision logic: per-action QoE gain prediction, fairness
//! loss modeling against a simulated default-scheduler allocation, joint
//! optimization over flows, hysteresis and warm-up stabilization, and
//! shaping directives (probe dropping, uplink enhancement dropping).

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clip01;
use crate::packet::{Direction, UeId};
use crate::solver::{self, FlowSolveInput, SolveInput};
use crate::{Error, Result};

pub const TARGET_BASE_FPS: f64 = 8.0;
pub const TARGET_ENH_FPS: f64 = 16.0;
pub const MAX_VIDEO_DELAY_MS: f64 = 80.0;
pub const MAX_AUDIO_DELAY_MS: f64 = 50.0;
pub const W_BASE: f64 = 0.4;
pub const W_ENH: f64 = 0.2;
pub const W_AUDIO: f64 = 0.4;
pub const BOOST: f64 = 0.5;

/// Which subflows of a flow are prioritized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub base: bool,
    pub enh: bool,
    pub audio: bool,
}

pub const ACTION_NONE: Action = Action { base: false, enh: false, audio: false };
pub const ACTION_BASE_AUDIO: Action = Action { base: true, enh: false, audio: true };
pub const ACTION_ALL: Action = Action { base: true, enh: true, audio: true };

impl Action {
    pub fn count(&self) -> u8 {
        self.base as u8 + self.enh as u8 + self.audio as u8
    }

    /// Canonical order: fewer prioritized subflows first, then by the
    /// (base, enh, audio) bit pattern.
    pub fn canonical_key(&self) -> (u8, u8) {
        let bits = ((self.base as u8) << 2) | ((self.enh as u8) << 1) | self.audio as u8;
        (self.count(), bits)
    }

    pub fn label(&self) -> String {
        format!("{}{}{}", self.base as u8, self.enh as u8, self.audio as u8)
    }

    pub fn parse_label(s: &str) -> Result<Self> {
        let b: Vec<char> = s.chars().collect();
        if b.len() != 3 || b.iter().any(|c| *c != '0' && *c != '1') {
            return Err(Error::InvalidInput(format!("bad action label {s:?}")));
        }
        Ok(Action { base: b[0] == '1', enh: b[1] == '1', audio: b[2] == '1' })
    }

    pub fn all_eight() -> Vec<Action> {
        let mut v = Vec::new();
        for base in [false, true] {
            for enh in [false, true] {
                for audio in [false, true] {
                    v.push(Action { base, enh, audio });
                }
            }
        }
        v.sort_by_key(|a| a.canonical_key());
        v
    }
}

/// Default candidate set: no prioritization, base+audio, everything.
pub fn default_candidates() -> Vec<Action> {
    vec![ACTION_NONE, ACTION_BASE_AUDIO, ACTION_ALL]
}

/// Current QoE state of one conferencing flow, as reported by the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QoeState {
    pub base_fps: f64,
    pub enh_fps: f64,
    pub base_delay_ms: f64,
    pub enh_delay_ms: f64,
    pub audio_delay_ms: f64,
}

/// Predicted QoE under `action` given the current state, in [0, 1].
/// Prioritizing a subflow adds gain proportional to its remaining
/// quality gap; enhancement quality is capped by base quality.
pub fn qoe_gain(action: Action, s: &QoeState) -> f64 {
    let q_b_fps = clip01(s.base_fps / TARGET_BASE_FPS);
    let q_e_fps = clip01(s.enh_fps / TARGET_ENH_FPS).min(q_b_fps);

    let q_b_delay = clip01(1.0 - s.base_delay_ms / MAX_VIDEO_DELAY_MS);
    let q_e_delay = clip01(1.0 - s.enh_delay_ms / MAX_VIDEO_DELAY_MS);
    let q_audio = clip01(1.0 - s.audio_delay_ms / MAX_AUDIO_DELAY_MS);

    let q_base = 0.7 * q_b_fps + 0.3 * q_b_delay;
    let q_enh = 0.5 * q_e_fps + 0.5 * q_e_delay;

    let q0 = W_BASE * q_base + W_ENH * q_enh + W_AUDIO * q_audio;

    let gain = BOOST
        * (W_BASE * (action.base as u8 as f64) * (1.0 - q_base)
            + W_ENH * (action.enh as u8 as f64) * (1.0 - q_enh)
            + W_AUDIO * (action.audio as u8 as f64) * (1.0 - q_audio));

    clip01(q0 + gain)
}

/// Max-min fair allocation of `capacity` across demands; infinite
/// demands absorb whatever bounded demands leave behind.
pub fn max_min_alloc(demands: &[f64], capacity: f64) -> Vec<f64> {
    let n = demands.len();
    let mut alloc = vec![0.0; n];
    if n == 0 || capacity <= 0.0 {
        return alloc;
    }
    let mut active: Vec<usize> = (0..n).collect();
    let mut remaining = capacity;
    loop {
        if active.is_empty() || remaining <= 1e-12 {
            break;
        }
        let fair = remaining / active.len() as f64;
        let satisfied: Vec<usize> =
            active.iter().copied().filter(|&i| demands[i] <= fair).collect();
        if satisfied.is_empty() {
            for &i in &active {
                alloc[i] = fair;
            }
            break;
        }
        for &i in &satisfied {
            alloc[i] = demands[i];
            remaining -= demands[i];
        }
        active.retain(|i| !satisfied.contains(i));
    }
    alloc
}

/// Offered-load and link view of one UE in one direction, used by the
/// fairness model.
#[derive(Debug, Clone, Copy)]
pub struct UeLoadView {
    pub ue: UeId,
    pub bits_per_prb: f64,
    pub zoom_bps: f64,
    pub background_bps: f64,
    pub bw_hungry: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessBreakdown {
    pub total_prb: f64,
    /// U: PRBs the default scheduler would hand to non-conferencing load.
    pub non_zoom_prbs: f64,
    /// S = C - U.
    pub slack_prbs: f64,
    /// R: PRBs reserved for prioritized subflows under the decision.
    pub reserved_prbs: f64,
    pub excess_prbs: f64,
    pub loss: f64,
}

/// Final normalization of the fairness loss: excess reservation beyond
/// slack, normalized by the ordinary-traffic share.
pub fn loss_from_parts(total_prb: f64, non_zoom_prbs: f64, reserved_prbs: f64) -> f64 {
    let slack = total_prb - non_zoom_prbs;
    let excess = (reserved_prbs - slack).max(0.0);
    clip01(excess / non_zoom_prbs.max(1.0))
}

/// PRBs needed to serve `bits` at the given spectral efficiency, as the
/// strict-priority reservation estimate.
pub fn prbs_for_bits(bits: f64, bits_per_prb: f64) -> f64 {
    if bits <= 0.0 || bits_per_prb <= 0.0 {
        return 0.0;
    }
    (bits / bits_per_prb).ceil()
}

/// Simulate the default scheduler over one interval and derive U and S.
/// Bandwidth-hungry UEs are modeled with unbounded demand; each UE's
/// allocation is pro-rated onto its non-conferencing byte share.
pub fn default_alloc_breakdown(
    ues: &[UeLoadView],
    total_prb: f64,
    interval_ms: f64,
) -> (f64, f64) {
    let demands: Vec<f64> = ues
        .iter()
        .map(|u| {
            if u.bw_hungry {
                f64::INFINITY
            } else {
                let bits = (u.zoom_bps + u.background_bps) * interval_ms / 1000.0;
                if u.bits_per_prb > 0.0 {
                    bits / u.bits_per_prb
                } else {
                    0.0
                }
            }
        })
        .collect();
    let alloc = max_min_alloc(&demands, total_prb);
    let mut non_zoom = 0.0;
    for (u, prbs) in ues.iter().zip(&alloc) {
        let total_load = u.zoom_bps + u.background_bps;
        if total_load > 0.0 {
            non_zoom += prbs * (u.background_bps / total_load);
        }
    }
    (non_zoom, total_prb - non_zoom)
}

/// Per-flow reservation for the given action, from smoothed subflow loads.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubflowLoads {
    pub base_bps: f64,
    pub enh_bps: f64,
    pub audio_bps: f64,
    pub probe_bps: f64,
    pub control_bps: f64,
}

impl SubflowLoads {
    pub fn zoom_total_bps(&self) -> f64 {
        self.base_bps + self.enh_bps + self.audio_bps + self.probe_bps + self.control_bps
    }

    pub fn prioritized_bps(&self, action: Action) -> f64 {
        let mut bps = 0.0;
        if action.base {
            bps += self.base_bps;
        }
        if action.enh {
            bps += self.enh_bps;
        }
        if action.audio {
            bps += self.audio_bps;
        }
        bps
    }
}

/// One conferencing flow as the controller sees it.
#[derive(Debug, Clone)]
pub struct FlowView {
    pub flow: FlowId,
    pub ue: UeId,
    pub qoe: QoeState,
    pub loads: SubflowLoads,
    pub bits_per_prb: f64,
    pub age_ms: f64,
}

/// Everything the controller needs about one direction of the cell.
#[derive(Debug, Clone)]
pub struct DirectionView {
    pub direction: Direction,
    pub flows: Vec<FlowView>,
    pub ues: Vec<UeLoadView>,
    pub total_prb: f64,
    pub interval_ms: f64,
}

/// Fairness loss of a joint decision, Listing-style: simulate the default
/// allocation, derive slack, sum per-flow reservations, normalize excess.
pub fn fairness_loss(actions: &[Action], view: &DirectionView) -> FairnessBreakdown {
    assert_eq!(actions.len(), view.flows.len());
    let (non_zoom, slack) = default_alloc_breakdown(&view.ues, view.total_prb, view.interval_ms);
    let mut reserved = 0.0;
    for (flow, action) in view.flows.iter().zip(actions) {
        let bits = flow.loads.prioritized_bps(*action) * view.interval_ms / 1000.0;
        reserved += prbs_for_bits(bits, flow.bits_per_prb);
    }
    let excess = (reserved - slack).max(0.0);
    FairnessBreakdown {
        total_prb: view.total_prb,
        non_zoom_prbs: non_zoom,
        slack_prbs: slack,
        reserved_prbs: reserved,
        excess_prbs: excess,
        loss: loss_from_parts(view.total_prb, non_zoom, reserved),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePoint(pub f64, pub f64);

/// Identity of one conferencing flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId {
    pub ue: UeId,
    pub direction: Direction,
    pub index: u32,
}

impl FlowId {
    pub fn label(&self) -> String {
        format!("ue{}-{}-{}", self.ue, self.direction.label(), self.index)
    }
}

fn default_candidates_cfg() -> Vec<Action> {
    default_candidates()
}
fn default_interval() -> f64 {
    50.0
}
fn default_hysteresis() -> u32 {
    5
}
fn default_warmup() -> f64 {
    2000.0
}
fn default_threshold() -> usize {
    12
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Worst-flow vs mean QoE blend, in [0, 1].
    pub alpha: f64,
    /// QoE vs fairness blend, in [0, 1].
    pub beta: f64,
    #[serde(default = "default_interval")]
    pub interval_ms: f64,
    #[serde(default = "default_hysteresis")]
    pub hysteresis_multiple: u32,
    #[serde(default = "default_warmup")]
    pub warmup_ms: f64,
    #[serde(default = "default_threshold")]
    pub enumeration_threshold: usize,
    #[serde(default = "default_candidates_cfg")]
    pub candidates: Vec<Action>,
    #[serde(default = "default_true")]
    pub enable_enhancement_drop: bool,
    #[serde(default = "default_true")]
    pub enable_probe_shaping: bool,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            alpha: 0.5,
            beta: 0.5,
            interval_ms: 50.0,
            hysteresis_multiple: 5,
            warmup_ms: 2000.0,
            enumeration_threshold: 12,
            candidates: default_candidates(),
            enable_enhancement_drop: true,
            enable_probe_shaping: true,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.interval_ms <= 0.0 {
            return Err(Error::InvalidConfig("interval_ms must be positive".into()));
        }
        if self.hysteresis_multiple == 0 {
            return Err(Error::InvalidConfig("hysteresis_multiple must be >= 1".into()));
        }
        if self.candidates.is_empty() {
            return Err(Error::InvalidConfig("candidate action set is empty".into()));
        }
        Ok(())
    }

    /// Candidate actions deduplicated and in canonical order.
    pub fn canonical_candidates(&self) -> Vec<Action> {
        let mut c = self.candidates.clone();
        c.sort_by_key(|a| a.canonical_key());
        c.dedup();
        c
    }
}

/// Commit-after-consecutive-proposals state for one flow.
#[derive(Debug, Clone)]
pub struct FlowStabilizer {
    pub committed: Action,
    pending: Option<(Action, u32)>,
    pub first_seen_ms: f64,
}

impl FlowStabilizer {
    pub fn new(first_seen_ms: f64) -> Self {
        FlowStabilizer { committed: ACTION_ALL, pending: None, first_seen_ms }
    }

    /// Feed one proposal; returns the effective action for this interval.
    /// Flows younger than the warm-up hold full prioritization.
    pub fn tick(&mut self, proposal: Action, now_ms: f64, hysteresis: u32, warmup_ms: f64) -> Action {
        if proposal == self.committed {
            self.pending = None;
        } else {
            let run = match self.pending {
                Some((p, n)) if p == proposal => n + 1,
                _ => 1,
            };
            if run >= hysteresis {
                self.committed = proposal;
                self.pending = None;
            } else {
                self.pending = Some((proposal, run));
            }
        }
        if now_ms - self.first_seen_ms < warmup_ms {
            ACTION_ALL
        } else {
            self.committed
        }
    }

    pub fn in_warmup(&self, now_ms: f64, warmup_ms: f64) -> bool {
        now_ms - self.first_seen_ms < warmup_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapingDirectives {
    pub probe_drop_probability: f64,
    pub enhancement_drop: bool,
}

/// Shaping for one flow under its committed action. Probe dropping kicks
/// in when offered load exceeds the capacity allocated to the flow's
/// prioritized subflows; unprioritized flows are left unshaped.
pub fn shaping_directives(
    action: Action,
    direction: Direction,
    in_warmup: bool,
    offered_bps: f64,
    allocated_bps: f64,
    enable_enhancement_drop: bool,
    enable_probe_shaping: bool,
) -> ShapingDirectives {
    if in_warmup {
        return ShapingDirectives::default();
    }
    let enhancement_drop =
        enable_enhancement_drop && direction == Direction::Uplink && action == ACTION_BASE_AUDIO;
    let probe_drop_probability = if enable_probe_shaping
        && action != ACTION_NONE
        && offered_bps > allocated_bps
        && offered_bps > 0.0
    {
        clip01((offered_bps - allocated_bps) / offered_bps)
    } else {
        0.0
    };
    ShapingDirectives { probe_drop_probability, enhancement_drop }
}

/// Committed decision for one flow plus its shaping directives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowDecision {
    pub proposed: Action,
    pub committed: Action,
    pub directives: ShapingDirectives,
    pub in_warmup: bool,
}

/// Per-direction diagnostics of one solver run, for the decision log.
#[derive(Debug, Clone, Copy)]
pub struct TickDiagnostics {
    pub direction: Direction,
    pub fairness_loss: f64,
    pub q_agg: f64,
    pub objective: f64,
    pub excess_prbs: f64,
    pub solve_time_ms: f64,
    pub fallback: bool,
}

#[derive(Debug, Default)]
pub struct ControlTick {
    pub decisions: BTreeMap<FlowId, FlowDecision>,
    pub diagnostics: Vec<TickDiagnostics>,
}

/// The closed-loop controller: owns per-flow stabilizers and turns
/// monitor views into committed decisions once per interval.
pub struct Controller {
    pub params: ControllerParams,
    stabilizers: BTreeMap<FlowId, FlowStabilizer>,
}

impl Controller {
    pub fn new(params: ControllerParams) -> Result<Self> {
        params.validate()?;
        Ok(Controller { params, stabilizers: BTreeMap::new() })
    }

    /// Run one decision interval over both direction views.
    pub fn tick(&mut self, now_ms: f64, views: &[DirectionView]) -> ControlTick {
        let mut out = ControlTick::default();
        for view in views {
            if view.flows.is_empty() {
                continue;
            }
            let started = Instant::now();
            let candidates = self.params.canonical_candidates();
            let (non_zoom, slack) =
                default_alloc_breakdown(&view.ues, view.total_prb, view.interval_ms);

            let flows: Vec<FlowSolveInput> = view
                .flows
                .iter()
                .map(|f| {
                    let qoe: Vec<f64> =
                        candidates.iter().map(|a| qoe_gain(*a, &f.qoe) * 100.0).collect();
                    let reserved: Vec<f64> = candidates
                        .iter()
                        .map(|a| {
                            let bits = f.loads.prioritized_bps(*a) * view.interval_ms / 1000.0;
                            prbs_for_bits(bits, f.bits_per_prb)
                        })
                        .collect();
                    FlowSolveInput { qoe, reserved_prbs: reserved }
                })
                .collect();

            let input = SolveInput {
                flows,
                total_prb: view.total_prb,
                non_zoom_prbs: non_zoom,
                slack_prbs: slack,
                alpha: self.params.alpha,
                beta: self.params.beta,
            };
            let solved = solver::solve(&input, self.params.enumeration_threshold);
            let (proposals, q_agg, objective, excess, fallback) = match solved {
                Some(o) => {
                    let acts: Vec<Action> = o.actions.iter().map(|&i| candidates[i]).collect();
                    (acts, o.q_agg, o.objective, o.excess_prbs, false)
                }
                // All vectors violate the excess cap: all-unprioritized is
                // always feasible (it reserves nothing).
                None => (vec![ACTION_NONE; view.flows.len()], 0.0, 0.0, 0.0, true),
            };
            let solve_time_ms = started.elapsed().as_secs_f64() * 1000.0;

            let breakdown = fairness_loss(&proposals, view);
            // Capacity each flow's prioritized subflows can actually get,
            // for probe shaping: reservations scale down when the high
            // class overflows the cell.
            let scale = if breakdown.reserved_prbs > view.total_prb && breakdown.reserved_prbs > 0.0
            {
                view.total_prb / breakdown.reserved_prbs
            } else {
                1.0
            };

            for (i, f) in view.flows.iter().enumerate() {
                let proposal = proposals[i];
                let stab = self
                    .stabilizers
                    .entry(f.flow)
                    .or_insert_with(|| FlowStabilizer::new(now_ms - f.age_ms));
                let committed = stab.tick(
                    proposal,
                    now_ms,
                    self.params.hysteresis_multiple,
                    self.params.warmup_ms,
                );
                let in_warmup = stab.in_warmup(now_ms, self.params.warmup_ms);
                let reserved_bits =
                    f.loads.prioritized_bps(committed) * view.interval_ms / 1000.0;
                let granted_prbs = prbs_for_bits(reserved_bits, f.bits_per_prb) * scale;
                let allocated_bps = granted_prbs * f.bits_per_prb * 1000.0 / view.interval_ms;
                let directives = shaping_directives(
                    committed,
                    view.direction,
                    in_warmup,
                    f.loads.zoom_total_bps(),
                    allocated_bps,
                    self.params.enable_enhancement_drop,
                    self.params.enable_probe_shaping,
                );
                out.decisions.insert(
                    f.flow,
                    FlowDecision { proposed: proposal, committed, directives, in_warmup },
                );
            }

            out.diagnostics.push(TickDiagnostics {
                direction: view.direction,
                fairness_loss: breakdown.loss,
                q_agg,
                objective,
                excess_prbs: excess,
                solve_time_ms,
                fallback,
            });
        }
        out
    }
}
