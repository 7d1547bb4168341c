//! Point-to-point communication emulation.
//!
//! Each directed link delays a message by a deterministic floor
//! (serialization + propagation + processing) plus clamped Gaussian noise,
//! and may drop it. Links keep FIFO order and draw from their own random
//! substream.

mod emulator;
mod stats;
mod unit;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emulator::{Emulator, LinkRecord};
pub use stats::{quartile, LatencyStats};
pub use unit::CommUnit;

/// Default propagation speed in the medium, m/s.
pub const DEFAULT_PROP_SPEED: f64 = 2e8;
/// Default size of a scalar sample message, bits.
pub const SAMPLE_BITS: u32 = 1024;
/// Default size of a consensus message, bits.
pub const CONSENSUS_BITS: u32 = 1536;

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("no link from {src} to {dst}")]
    UnknownLink { src: String, dst: String },
    #[error("duplicate link id {0}")]
    DuplicateLink(String),
    #[error("two links share the route {src} -> {dst}")]
    DuplicateRoute { src: String, dst: String },
    #[error("link {id}: {what} out of range (got {value})")]
    InvalidParameter { id: String, what: &'static str, value: f64 },
    #[error("link {0}: no delivered packets")]
    NoData(String),
}

/// Parameters of one directed link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub distance_m: f64,
    pub prop_speed_m_s: f64,
    pub data_rate_bps: f64,
    pub proc_delay_s: f64,
    /// Standard deviation of the additive latency noise, s.
    pub noise_sigma_s: f64,
    pub loss_prob: f64,
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), CommError> {
        let bad = |what, value| CommError::InvalidParameter {
            id: self.id.clone(),
            what,
            value,
        };
        if !(self.distance_m >= 0.0) || !self.distance_m.is_finite() {
            return Err(bad("distance", self.distance_m));
        }
        if !(self.prop_speed_m_s > 0.0) {
            return Err(bad("propagation speed", self.prop_speed_m_s));
        }
        if !(self.data_rate_bps > 0.0) {
            return Err(bad("data rate", self.data_rate_bps));
        }
        if !(self.proc_delay_s >= 0.0) {
            return Err(bad("processing delay", self.proc_delay_s));
        }
        if !(self.noise_sigma_s >= 0.0) {
            return Err(bad("noise sigma", self.noise_sigma_s));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(bad("loss probability", self.loss_prob));
        }
        Ok(())
    }

    /// Deterministic part of the latency for a message of `size_bits`, s.
    pub fn floor(&self, size_bits: u32) -> f64 {
        size_bits as f64 / self.data_rate_bps + self.distance_m / self.prop_speed_m_s + self.proc_delay_s
    }
}

/// One-sided latency draw: `max(floor, floor + n)` with `n ~ N(0, σ²)`.
pub fn sample_latency<R: Rng + ?Sized>(link: &LinkParams, size_bits: u32, rng: &mut R) -> f64 {
    let floor = link.floor(size_bits);
    if link.noise_sigma_s == 0.0 {
        return floor;
    }
    let noise = Normal::new(0.0, link.noise_sigma_s)
        .expect("sigma validated non-negative")
        .sample(rng);
    floor + noise.max(0.0)
}

/// Mean of the clamped-Gaussian latency model: `floor + σ/√(2π)`.
pub fn expected_latency(link: &LinkParams, size_bits: u32) -> f64 {
    link.floor(size_bits) + link.noise_sigma_s / (2.0 * std::f64::consts::PI).sqrt()
}

/// Named network quality cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkPreset {
    /// Zero latency and zero loss on every link.
    Ideal,
    #[serde(rename = "network-1")]
    Network1,
    #[serde(rename = "network-2")]
    Network2,
    #[serde(rename = "network-3")]
    Network3,
    /// All link parameters given explicitly.
    Custom,
}

impl NetworkPreset {
    pub const PAPER_CASES: [NetworkPreset; 4] = [
        NetworkPreset::Ideal,
        NetworkPreset::Network1,
        NetworkPreset::Network2,
        NetworkPreset::Network3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NetworkPreset::Ideal => "ideal",
            NetworkPreset::Network1 => "network-1",
            NetworkPreset::Network2 => "network-2",
            NetworkPreset::Network3 => "network-3",
            NetworkPreset::Custom => "custom",
        }
    }

    /// Data rate used by the preset, bit/s.
    pub fn data_rate_bps(&self) -> Option<f64> {
        match self {
            NetworkPreset::Network1 => Some(1e6),
            NetworkPreset::Network2 => Some(1e5),
            NetworkPreset::Network3 => Some(1e4),
            NetworkPreset::Ideal | NetworkPreset::Custom => None,
        }
    }

    pub fn is_ideal(&self) -> bool {
        matches!(self, NetworkPreset::Ideal)
    }
}

/// Optional per-link overrides on top of a preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkOverrides {
    pub prop_speed_m_s: Option<f64>,
    pub data_rate_bps: Option<f64>,
    pub proc_delay_s: Option<f64>,
    pub noise_sigma_s: Option<f64>,
    pub loss_prob: Option<f64>,
}

/// Builds link parameters from a preset, a route, and overrides.
///
/// Preset noise is 10 % of the floor of a scalar sample message. `scale`
/// multiplies every time constant of the link (floor and noise) and must be
/// positive.
pub fn resolve_link(
    preset: NetworkPreset,
    id: &str,
    src: &str,
    dst: &str,
    distance_m: f64,
    overrides: &LinkOverrides,
    scale: f64,
) -> LinkParams {
    let data_rate = overrides
        .data_rate_bps
        .or(preset.data_rate_bps())
        .unwrap_or(f64::INFINITY);
    let prop_speed = overrides.prop_speed_m_s.unwrap_or(DEFAULT_PROP_SPEED);
    let proc_delay = overrides.proc_delay_s.unwrap_or(0.0);
    let mut link = LinkParams {
        id: id.to_string(),
        src: src.to_string(),
        dst: dst.to_string(),
        distance_m,
        prop_speed_m_s: prop_speed,
        data_rate_bps: data_rate,
        proc_delay_s: proc_delay,
        noise_sigma_s: 0.0,
        loss_prob: overrides.loss_prob.unwrap_or(0.0),
    };
    link.noise_sigma_s = overrides.noise_sigma_s.unwrap_or(match preset {
        NetworkPreset::Ideal | NetworkPreset::Custom => 0.0,
        _ => 0.1 * link.floor(SAMPLE_BITS),
    });
    if scale != 1.0 {
        link.data_rate_bps /= scale;
        link.prop_speed_m_s /= scale;
        link.proc_delay_s *= scale;
        link.noise_sigma_s *= scale;
    }
    link
}
