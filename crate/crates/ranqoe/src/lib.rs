//! Deterministic desk-scale 5G RAN simulator with a closed QoE-aware
//! subflow prioritization loop.
//!
//! The crate models a single cell (PRB scheduling, HARQ-ACK timing, BSR
//! reporting), synthetic video-conferencing and background traffic, an
//! in-RAN monitor that infers per-subflow QoE and offered load, and a
//! controller that picks per-flow prioritization actions by trading off
//! QoE gain against a fairness loss model. Baseline policies, a composite
//! QoE scoring model, and a packet-to-frame alignment tool round out the
//! experiment pipeline driven by the `ranqoe` CLI.

pub mod baselines;
pub mod controller;
pub mod dpi;
pub mod flow2frame;
pub mod monitor;
pub mod packet;
pub mod qoe;
pub mod ran;
pub mod scenario;
pub mod sim;
pub mod solver;
pub mod trace;
pub mod traffic;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Clamp to the unit interval; used by the QoE and fairness models.
#[inline]
pub(crate) fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}
