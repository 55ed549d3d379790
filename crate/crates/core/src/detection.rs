//! Click detectors: efficiency thinning, Poissonian dark counts and
//! periodic gating.

use rand::Rng;

use crate::model::PhotonEvent;
use crate::source::PoissonClock;
use crate::time::{Interval, PeriodicGate, Time};
use crate::timestamps::TimestampRecord;

pub const IDLER_CHANNEL: u8 = 1;
pub const SIGNAL_CHANNEL: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSpec {
    pub channel: u8,
    pub efficiency: f64,
    pub dark_rate: f64,
    pub gate: PeriodicGate,
}

impl DetectorSpec {
    pub fn signal_default() -> Self {
        DetectorSpec {
            channel: SIGNAL_CHANNEL,
            efficiency: 0.32,
            dark_rate: 10.0,
            gate: PeriodicGate::always_on(),
        }
    }

    pub fn idler_default() -> Self {
        DetectorSpec {
            channel: IDLER_CHANNEL,
            efficiency: 0.10,
            dark_rate: 400.0,
            gate: PeriodicGate::always_on(),
        }
    }

    /// Whether a photon arriving at `t` produces a click.
    pub fn registers<R: Rng + ?Sized>(&self, t: Time, rng: &mut R) -> bool {
        self.gate.is_on(t) && rng.random::<f64>() < self.efficiency
    }

    /// Dark clicks over the gate-on part of `span`, in time order.
    pub fn dark_counts<R: Rng + ?Sized>(&self, span: Interval, rng: &mut R) -> Vec<Time> {
        let mut out = Vec::new();
        for on in self.gate.on_intervals(span) {
            let mut clock = PoissonClock::new(self.dark_rate, on);
            while let Some(t) = clock.next_arrival(rng) {
                out.push(t);
            }
        }
        out
    }
}

/// Click times for photon arrivals (sorted) plus dark counts over `span`.
/// Dark counts are drawn first, then one thinning draw per photon.
pub fn detect_times<R: Rng + ?Sized>(
    arrivals: &[Time],
    spec: &DetectorSpec,
    span: Interval,
    rng: &mut R,
) -> Vec<Time> {
    let dark = spec.dark_counts(span, rng);
    let photons: Vec<Time> = arrivals
        .iter()
        .copied()
        .filter(|t| spec.registers(*t, rng))
        .collect();
    merge_sorted(&photons, &dark)
}

pub fn detect<R: Rng + ?Sized>(
    events: &[PhotonEvent],
    spec: &DetectorSpec,
    span: Interval,
    rng: &mut R,
) -> Vec<TimestampRecord> {
    let arrivals: Vec<Time> = events.iter().map(|e| e.time).collect();
    debug_assert!(arrivals.windows(2).all(|w| w[0] <= w[1]));
    detect_times(&arrivals, spec, span, rng)
        .into_iter()
        .map(|time| TimestampRecord {
            channel: spec.channel,
            time,
        })
        .collect()
}

pub fn merge_sorted(a: &[Time], b: &[Time]) -> Vec<Time> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
