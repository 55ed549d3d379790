//! Pair source: Poisson pair emission over the clustered mode spectrum,
//! broadband signal-arm noise, and herald-triggered pump gating.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::model::{Arm, Origin, PhotonEvent, SpectralMode, MODE_COUNT};
use crate::time::{Interval, PeriodicGate, Time, PS_PER_S};

/// How the configured correlation time maps to the delay distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationConvention {
    /// 1/e decay constant of the two-sided exponential.
    OneOverE,
    /// Full width at half maximum of the two-sided exponential.
    Fwhm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    pub pump_power_mw: f64,
    /// Pairs per second per mW of pump while the pump is on.
    pub pair_rate_per_mw: f64,
    pub correlation_time: Time,
    pub convention: CorrelationConvention,
    pub resonant_mode_index: u8,
    /// Broadband signal-arm noise, counts per second per mW.
    pub noise_rate_per_mw: f64,
    /// Alternation of cavity locking and pair production.
    pub duty: PeriodicGate,
    /// Switch the pump off after each herald.
    pub gating: bool,
    pub gate_lead: Time,
    pub gate_hold: Time,
}

impl Default for SourceParams {
    fn default() -> Self {
        SourceParams {
            pump_power_mw: 2.0,
            pair_rate_per_mw: 75_000.0,
            correlation_time: Time::from_ns(108),
            convention: CorrelationConvention::OneOverE,
            resonant_mode_index: 1,
            noise_rate_per_mw: 0.0,
            duty: PeriodicGate::new(Time::from_ms(10), 0.45),
            gating: true,
            gate_lead: Time::from_ns(500),
            gate_hold: Time::from_us(20),
        }
    }
}

impl SourceParams {
    pub fn pair_rate(&self) -> f64 {
        self.pump_power_mw * self.pair_rate_per_mw
    }

    pub fn noise_rate(&self) -> f64 {
        self.pump_power_mw * self.noise_rate_per_mw
    }

    /// 1/e scale of the signal–idler delay, in picoseconds.
    pub fn delay_scale_ps(&self) -> f64 {
        let t = self.correlation_time.ps() as f64;
        match self.convention {
            CorrelationConvention::OneOverE => t,
            CorrelationConvention::Fwhm => t / (2.0 * std::f64::consts::LN_2),
        }
    }
}

/// Homogeneous Poisson arrivals restricted to one interval.
#[derive(Debug, Clone)]
pub struct PoissonClock {
    mean_gap_ps: f64,
    cursor_ps: f64,
    end: Time,
}

impl PoissonClock {
    pub fn new(rate_per_s: f64, span: Interval) -> Self {
        let mean_gap_ps = if rate_per_s > 0.0 {
            PS_PER_S as f64 / rate_per_s
        } else {
            f64::INFINITY
        };
        PoissonClock {
            mean_gap_ps,
            cursor_ps: span.start.ps() as f64,
            end: span.end,
        }
    }

    pub fn next_arrival<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Time> {
        if !self.mean_gap_ps.is_finite() {
            return None;
        }
        let gap: f64 = Exp1.sample(rng);
        self.cursor_ps += gap * self.mean_gap_ps;
        let t = Time::from_ps_f64(self.cursor_ps);
        if self.cursor_ps >= self.end.ps() as f64 || t >= self.end {
            self.mean_gap_ps = f64::INFINITY;
            return None;
        }
        Some(t)
    }
}

/// One emitted pair before any gating decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCandidate {
    pub time: Time,
    pub mode: SpectralMode,
    /// Signal time minus idler time, ps.
    pub delay_ps: i64,
}

impl PairCandidate {
    pub fn events(&self, pair_id: u64) -> (PhotonEvent, PhotonEvent) {
        let idler = PhotonEvent {
            arm: Arm::Idler,
            time: self.time,
            mode: Some(self.mode),
            origin: Origin::Pair(pair_id),
        };
        let signal = PhotonEvent {
            arm: Arm::Signal,
            time: self.time.offset(self.delay_ps),
            mode: Some(self.mode),
            origin: Origin::Pair(pair_id),
        };
        (idler, signal)
    }
}

/// Pair candidates in time order over one interval. Each candidate consumes
/// the same draws whether or not it is later gated away.
#[derive(Debug, Clone)]
pub struct PairGenerator {
    clock: PoissonClock,
    modes: [SpectralMode; MODE_COUNT],
    delay_scale_ps: f64,
}

impl PairGenerator {
    pub fn new(params: &SourceParams, span: Interval) -> Self {
        PairGenerator {
            clock: PoissonClock::new(params.pair_rate(), span),
            modes: SpectralMode::all(params.resonant_mode_index),
            delay_scale_ps: params.delay_scale_ps(),
        }
    }

    pub fn next_pair<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<PairCandidate> {
        let time = self.clock.next_arrival(rng)?;
        let mode = self.modes[rng.random_range(0..MODE_COUNT)];
        let magnitude: f64 = Exp1.sample(rng);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let delay_ps = (sign * magnitude * self.delay_scale_ps).round() as i64;
        Some(PairCandidate {
            time,
            mode,
            delay_ps,
        })
    }
}

/// Pump-off intervals, sorted and disjoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GateSchedule {
    intervals: Vec<Interval>,
}

impl GateSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Appends an interval whose start is not before the last one's start,
    /// merging overlaps.
    pub fn push(&mut self, iv: Interval) {
        match self.intervals.last_mut() {
            Some(last) if iv.start <= last.end => {
                debug_assert!(iv.start >= last.start);
                last.end = last.end.max(iv.end);
            }
            _ => self.intervals.push(iv),
        }
    }

    pub fn contains(&self, t: Time) -> bool {
        let idx = self.intervals.partition_point(|iv| iv.end <= t);
        self.intervals.get(idx).is_some_and(|iv| iv.contains(t))
    }
}

/// Off interval triggered by a herald at `herald`: it opens `lead` before
/// the expected re-emission and lasts `hold`. When the storage time is
/// shorter than the lead the interval opens at the herald itself.
pub fn herald_off_interval(herald: Time, storage_time: Time, lead: Time, hold: Time) -> Interval {
    let start = if storage_time >= lead {
        herald + (storage_time - lead)
    } else {
        herald
    };
    Interval::new(start, start + hold)
}

pub fn build_gate_schedule(
    heralds: &[Time],
    storage_time: Time,
    params: &SourceParams,
) -> GateSchedule {
    let mut sorted = heralds.to_vec();
    sorted.sort_unstable();
    let mut schedule = GateSchedule::new();
    for h in sorted {
        schedule.push(herald_off_interval(
            h,
            storage_time,
            params.gate_lead,
            params.gate_hold,
        ));
    }
    schedule
}

/// Signal/idler pairs emitted during `span` with the pump on (source duty
/// on, outside `off`). Pair ids count up from `first_id`.
pub fn sample_pair_emissions<R: Rng + ?Sized>(
    params: &SourceParams,
    span: Interval,
    off: &GateSchedule,
    first_id: u64,
    rng: &mut R,
) -> Vec<(PhotonEvent, PhotonEvent)> {
    let mut out = Vec::new();
    let mut id = first_id;
    for on in params.duty.on_intervals(span) {
        let mut generator = PairGenerator::new(params, on);
        while let Some(candidate) = generator.next_pair(rng) {
            if off.contains(candidate.time) {
                continue;
            }
            out.push(candidate.events(id));
            id += 1;
        }
    }
    out
}

/// Broadband signal-arm noise during `span` with the pump on.
pub fn sample_broadband_noise<R: Rng + ?Sized>(
    params: &SourceParams,
    span: Interval,
    off: &GateSchedule,
    rng: &mut R,
) -> Vec<PhotonEvent> {
    let mut out = Vec::new();
    for on in params.duty.on_intervals(span) {
        let mut clock = PoissonClock::new(params.noise_rate(), on);
        while let Some(time) = clock.next_arrival(rng) {
            if off.contains(time) {
                continue;
            }
            out.push(PhotonEvent {
                arm: Arm::Signal,
                time,
                mode: None,
                origin: Origin::BroadbandNoise,
            });
        }
    }
    out
}
