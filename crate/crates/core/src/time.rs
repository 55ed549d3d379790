//! Integer picosecond time grid.
//!
//! Every stream, interval and delay in the crate is an integer number of
//! picoseconds. Floating point only appears at the reporting boundary.

use std::fmt;
use std::ops::{Add, Sub};

pub const PS_PER_NS: u64 = 1_000;
pub const PS_PER_US: u64 = 1_000_000;
pub const PS_PER_MS: u64 = 1_000_000_000;
pub const PS_PER_S: u64 = 1_000_000_000_000;

/// Picoseconds since scenario start (or a non-negative span of picoseconds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Time(pub u64);

impl Time {
    pub const ZERO: Time = Time(0);

    pub const fn from_ps(ps: u64) -> Self {
        Time(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        Time(ns * PS_PER_NS)
    }

    pub const fn from_us(us: u64) -> Self {
        Time(us * PS_PER_US)
    }

    pub const fn from_ms(ms: u64) -> Self {
        Time(ms * PS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        Time(s * PS_PER_S)
    }

    /// Rounds a non-negative floating point picosecond value onto the grid.
    pub fn from_ps_f64(ps: f64) -> Self {
        debug_assert!(ps >= 0.0);
        Time(ps.round().max(0.0) as u64)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Self::from_ps_f64(s * PS_PER_S as f64)
    }

    pub const fn ps(self) -> u64 {
        self.0
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 / PS_PER_NS as f64
    }

    pub fn as_us(self) -> f64 {
        self.0 as f64 / PS_PER_US as f64
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / PS_PER_S as f64
    }

    pub fn saturating_sub(self, rhs: Time) -> Time {
        Time(self.0.saturating_sub(rhs.0))
    }

    /// Shifts by a signed picosecond offset, clamping at the scenario start.
    pub fn offset(self, delta_ps: i64) -> Time {
        if delta_ps >= 0 {
            Time(self.0 + delta_ps as u64)
        } else {
            Time(self.0.saturating_sub(delta_ps.unsigned_abs()))
        }
    }

    /// Signed difference `self - earlier` in picoseconds.
    pub fn delay_from(self, earlier: Time) -> i64 {
        self.0 as i64 - earlier.0 as i64
    }
}

impl Add for Time {
    type Output = Time;
    fn add(self, rhs: Time) -> Time {
        Time(self.0 + rhs.0)
    }
}

impl Sub for Time {
    type Output = Time;
    fn sub(self, rhs: Time) -> Time {
        Time(self.0 - rhs.0)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ps", self.0)
    }
}

/// Half-open interval `[start, end)` on the picosecond grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: Time,
    pub end: Time,
}

impl Interval {
    pub fn new(start: Time, end: Time) -> Self {
        debug_assert!(start <= end);
        Interval { start, end }
    }

    pub fn len(&self) -> Time {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn contains(&self, t: Time) -> bool {
        self.start <= t && t < self.end
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(Interval { start, end })
    }
}


/// Periodic on/off gate. Each period starts with its off part and ends with
/// its on part: `[k·period + off_len, (k+1)·period)` is open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGate {
    pub period: Time,
    pub on_fraction: f64,
}

impl PeriodicGate {
    pub fn always_on() -> Self {
        PeriodicGate {
            period: Time::from_secs(1),
            on_fraction: 1.0,
        }
    }

    pub fn new(period: Time, on_fraction: f64) -> Self {
        PeriodicGate { period, on_fraction }
    }

    pub fn is_always_on(&self) -> bool {
        self.on_fraction >= 1.0
    }

    pub fn off_len(&self) -> Time {
        if self.is_always_on() {
            Time::ZERO
        } else {
            Time::from_ps_f64((1.0 - self.on_fraction) * self.period.ps() as f64)
        }
    }

    pub fn on_len(&self) -> Time {
        self.period - self.off_len()
    }

    pub fn is_on(&self, t: Time) -> bool {
        if self.is_always_on() {
            return true;
        }
        t.ps() % self.period.ps() >= self.off_len().ps()
    }

    pub fn on_interval(&self, period_index: u64) -> Interval {
        let start = Time(period_index * self.period.ps());
        Interval::new(start + self.off_len(), start + self.period)
    }

    /// On-intervals intersected with `span`, in time order.
    pub fn on_intervals(&self, span: Interval) -> Vec<Interval> {
        if span.is_empty() {
            return Vec::new();
        }
        if self.is_always_on() {
            return vec![span];
        }
        let first = span.start.ps() / self.period.ps();
        let last = (span.end.ps() - 1) / self.period.ps();
        (first..=last)
            .filter_map(|k| self.on_interval(k).intersect(&span))
            .collect()
    }

    pub fn on_duration(&self, span: Interval) -> Time {
        self.on_intervals(span)
            .iter()
            .fold(Time::ZERO, |acc, iv| acc + iv.len())
    }
}
