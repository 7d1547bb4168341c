//! Integer-tick simulation time.
//!
//! All units share one timeline expressed as a count of ticks. Seconds are
//! derived on demand as `ticks × resolution`, so time never accumulates
//! floating-point drift however long a run lasts.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Seconds per tick as an exact rational `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    num: u64,
    den: u64,
}

impl Resolution {
    /// One microsecond per tick.
    pub const MICROSECOND: Resolution = Resolution { num: 1, den: 1_000_000 };

    pub fn new(num: u64, den: u64) -> Option<Self> {
        if num == 0 || den == 0 {
            return None;
        }
        Some(Self { num, den })
    }

    /// `1 / ticks_per_second` seconds per tick.
    pub fn per_second(ticks_per_second: u64) -> Option<Self> {
        Self::new(1, ticks_per_second)
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn seconds_per_tick(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Converts a tick count to seconds.
    ///
    /// Computed as `(ticks · num) / den` with a single rounding when the
    /// product fits in 53 bits, so that `ticks_to_seconds(1044)` at 1 µs is
    /// the same double as parsing `"0.001044"`.
    pub fn ticks_to_seconds(&self, ticks: u64) -> f64 {
        (ticks as f64 * self.num as f64) / self.den as f64
    }

    /// Converts seconds to an exact tick count, or `None` if `seconds` is not
    /// an integer multiple of the resolution (within 1e-9 ticks).
    pub fn exact_ticks(&self, seconds: f64) -> Option<u64> {
        if !seconds.is_finite() || seconds < 0.0 {
            return None;
        }
        let ticks = seconds * self.den as f64 / self.num as f64;
        let rounded = ticks.round();
        if (ticks - rounded).abs() <= 1e-6_f64.max(ticks.abs() * 1e-12) {
            Some(rounded as u64)
        } else {
            None
        }
    }

    /// Smallest tick count whose duration is ≥ `seconds`.
    pub fn ceil_ticks(&self, seconds: f64) -> u64 {
        if seconds <= 0.0 {
            return 0;
        }
        let ticks = seconds * self.den as f64 / self.num as f64;
        // Snap values within rounding noise of an integer down onto it.
        let rounded = ticks.round();
        if (ticks - rounded).abs() < 1e-9 {
            rounded as u64
        } else {
            ticks.ceil() as u64
        }
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self::MICROSECOND
    }
}

/// A point on the shared timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime {
    ticks: u64,
}

impl SimTime {
    pub const ZERO: SimTime = SimTime { ticks: 0 };

    pub const fn from_ticks(ticks: u64) -> Self {
        Self { ticks }
    }

    pub const fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn seconds(&self, resolution: Resolution) -> f64 {
        resolution.ticks_to_seconds(self.ticks)
    }

    pub fn advance(self, ticks: u64) -> Self {
        Self {
            ticks: self.ticks.checked_add(ticks).expect("simulation time overflow"),
        }
    }

    /// Whether this instant falls on a period boundary.
    pub fn is_multiple_of(&self, period_ticks: u64) -> bool {
        period_ticks != 0 && self.ticks.is_multiple_of(period_ticks)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ticks", self.ticks)
    }
}
