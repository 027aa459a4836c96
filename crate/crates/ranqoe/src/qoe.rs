//! Composite 0-100 conferencing QoE score computed from receiver-side
//! traces: delay/jitter terms for audio and video, an FPS smoothness
//! term, and a resolution term that excludes frozen playback.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub const AUDIO_DELAY_THRESHOLD_MS: f64 = 150.0;
pub const VIDEO_DELAY_THRESHOLD_MS: f64 = 400.0;
pub const DELAY_EXPONENT: f64 = 0.5;
pub const JITTER_WEIGHT: f64 = 1.0;
pub const FPS_TARGET: f64 = 28.0;
pub const FPS_CV_PENALTY: f64 = 0.5;
pub const FPS_WINDOW_MS: f64 = 1000.0;
pub const FPS_STEP_MS: f64 = 300.0;
pub const FREEZE_FACTOR: f64 = 3.0;
pub const FREEZE_SLACK_MS: f64 = 150.0;
pub const FREEZE_HISTORY: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Audio,
    Video,
}

impl StreamKind {
    fn threshold_ms(self) -> f64 {
        match self {
            StreamKind::Audio => AUDIO_DELAY_THRESHOLD_MS,
            StreamKind::Video => VIDEO_DELAY_THRESHOLD_MS,
        }
    }
}

/// Rendered spatial layers with perceptual weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resolution {
    R640,
    R480,
    R320,
}

impl Resolution {
    pub fn weight(self) -> f64 {
        match self {
            Resolution::R640 => 1.0,
            Resolution::R480 => 0.6,
            Resolution::R320 => 0.3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Resolution::R640 => "640",
            Resolution::R480 => "480",
            Resolution::R320 => "320",
        }
    }

    pub fn parse_label(s: &str) -> crate::Result<Self> {
        Ok(match s {
            "640" => Resolution::R640,
            "480" => Resolution::R480,
            "320" => Resolution::R320,
            other => {
                return Err(crate::Error::InvalidInput(format!(
                    "unknown resolution {other:?}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderedFrame {
    pub render_ms: f64,
    pub resolution: Resolution,
}

/// Delay component: effective delay is mean one-way delay plus mean RTP
/// jitter; the score degrades as a square root past the threshold.
pub fn score_delay(stream: StreamKind, mean_delay_ms: f64, mean_jitter_ms: f64) -> f64 {
    let d_eff = mean_delay_ms + JITTER_WEIGHT * mean_jitter_ms;
    if d_eff <= 0.0 {
        return 25.0;
    }
    25.0 * (stream.threshold_ms() / d_eff).powf(DELAY_EXPONENT).min(1.0)
}

/// FPS component: saturates at the target mean, penalized by the
/// coefficient of variation.
pub fn score_fps(fps_series: &[f64]) -> f64 {
    if fps_series.is_empty() {
        return 0.0;
    }
    let n = fps_series.len() as f64;
    let mean = fps_series.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = fps_series.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    25.0 * (mean / FPS_TARGET).min(1.0) * (1.0 - FPS_CV_PENALTY * sd / mean).max(0.0)
}

/// Frame durations, including the tail duration of the last frame.
fn frame_durations(timeline: &[RenderedFrame], t_total_ms: f64) -> Vec<f64> {
    let n = timeline.len();
    (0..n)
        .map(|i| {
            if i + 1 < n {
                timeline[i + 1].render_ms - timeline[i].render_ms
            } else {
                t_total_ms - timeline[i].render_ms
            }
        })
        .collect()
}

/// A frame is frozen when its duration exceeds both three times the
/// recent mean duration and the recent mean plus 150 ms. The mean is
/// over up to the preceding 30 frame durations; the first frame has no
/// history and is never judged frozen.
pub fn detect_freezes(timeline: &[RenderedFrame], t_total_ms: f64) -> BTreeSet<usize> {
    let durations = frame_durations(timeline, t_total_ms);
    let mut frozen = BTreeSet::new();
    for i in 1..durations.len() {
        let lo = i.saturating_sub(FREEZE_HISTORY);
        let hist = &durations[lo..i];
        let mean = hist.iter().sum::<f64>() / hist.len() as f64;
        if durations[i] >= (FREEZE_FACTOR * mean).max(mean + FREEZE_SLACK_MS) {
            frozen.insert(i);
        }
    }
    frozen
}

/// Resolution component: time-weighted perceptual quality over non-frozen
/// frame durations, normalized by session length.
pub fn score_resolution(
    timeline: &[RenderedFrame],
    frozen: &BTreeSet<usize>,
    t_total_ms: f64,
) -> f64 {
    if t_total_ms <= 0.0 {
        return 0.0;
    }
    let durations = frame_durations(timeline, t_total_ms);
    let q: f64 = timeline
        .iter()
        .zip(&durations)
        .enumerate()
        .filter(|(i, _)| !frozen.contains(i))
        .map(|(_, (f, d))| f.resolution.weight() * d.max(0.0))
        .sum::<f64>()
        / t_total_ms;
    25.0 * q
}

/// FPS over a sliding window across the session.
pub fn fps_series(render_times_ms: &[f64], t_total_ms: f64) -> Vec<f64> {
    fps_series_with(render_times_ms, t_total_ms, FPS_WINDOW_MS, FPS_STEP_MS)
}

pub fn fps_series_with(
    render_times_ms: &[f64],
    t_total_ms: f64,
    window_ms: f64,
    step_ms: f64,
) -> Vec<f64> {
    if t_total_ms <= 0.0 {
        return Vec::new();
    }
    if t_total_ms <= window_ms {
        let count = render_times_ms.len() as f64;
        return vec![count / (t_total_ms / 1000.0)];
    }
    let mut out = Vec::new();
    let mut start = 0.0;
    while start + window_ms <= t_total_ms + 1e-9 {
        let end = start + window_ms;
        let count = render_times_ms
            .iter()
            .filter(|&&t| t >= start && t < end)
            .count() as f64;
        out.push(count / (window_ms / 1000.0));
        start += step_ms;
    }
    out
}

/// Mean RFC 3550 interarrival jitter over (arrival_ms, rtp_ms) samples.
pub fn rtp_interarrival_jitter(samples: &[(f64, f64)]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let mut j = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in samples.windows(2) {
        let d = (w[1].0 - w[0].0) - (w[1].1 - w[0].1);
        j += (d.abs() - j) / 16.0;
        sum += j;
        count += 1;
    }
    sum / count as f64
}

#[derive(Debug, Clone)]
pub struct QoeInputs {
    pub audio_mean_delay_ms: f64,
    pub audio_mean_jitter_ms: f64,
    pub video_mean_delay_ms: f64,
    pub video_mean_jitter_ms: f64,
    pub fps_series: Vec<f64>,
    pub render_timeline: Vec<RenderedFrame>,
    pub t_total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeScore {
    pub s_audio: f64,
    pub s_video: f64,
    pub s_fps: f64,
    pub s_res: f64,
}

impl QoeScore {
    pub fn total(&self) -> f64 {
        self.s_audio + self.s_video + self.s_fps + self.s_res
    }
}

pub fn composite(inputs: &QoeInputs) -> QoeScore {
    let frozen = detect_freezes(&inputs.render_timeline, inputs.t_total_ms);
    QoeScore {
        s_audio: score_delay(StreamKind::Audio, inputs.audio_mean_delay_ms, inputs.audio_mean_jitter_ms),
        s_video: score_delay(StreamKind::Video, inputs.video_mean_delay_ms, inputs.video_mean_jitter_ms),
        s_fps: score_fps(&inputs.fps_series),
        s_res: score_resolution(&inputs.render_timeline, &frozen, inputs.t_total_ms),
    }
}
