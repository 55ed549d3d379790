//! End-to-end event simulation: source, gating, optical chain, memory and
//! detectors, producing the two click streams of a time-tagger.
//!
//! The run is cut into slices, one per source duty period, that start with
//! the pump-on window and end with the following lock period. A slice's
//! heralds can only switch the pump off inside that slice, so slices are
//! independent and run in parallel. Inside a slice the simulation is causal
//! and sequential: candidates are visited in time order and every idler
//! click immediately extends the pump-off schedule.

use std::ops::AddAssign;

use rand::Rng;

use crate::chain::{path_transmission, ChainConfig};
use crate::detection::{merge_sorted, DetectorSpec, IDLER_CHANNEL, SIGNAL_CHANNEL};
use crate::memory::{storage_transform, Disposition, MemoryConfig, StorageModel};
use crate::model::{Arm, Origin, PhotonEvent};
use crate::parallel::{map_indexed, ExecMode};
use crate::rng::{names, stream, StreamRng};
use crate::source::{herald_off_interval, GateSchedule, PairCandidate, PairGenerator, PoissonClock, SourceParams};
use crate::time::{Interval, Time};
use crate::timestamps::TimestampRecord;

/// Slice length when the source runs without lock periods.
pub const CONTINUOUS_SLICE: Time = Time::from_ms(10);

/// Pair ids of slice `k` start at `k << PAIR_ID_SHIFT`.
const PAIR_ID_SHIFT: u32 = 40;

/// Everything needed to simulate one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub source: SourceParams,
    pub chain: ChainConfig,
    pub memory: MemoryConfig,
    pub signal_detector: DetectorSpec,
    pub idler_detector: DetectorSpec,
    pub duration: Time,
    pub seed: u64,
}

/// Event bookkeeping, summed over slices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub slices: u64,
    pub pairs_emitted: u64,
    pub pairs_gated: u64,
    pub noise_emitted: u64,
    pub noise_gated: u64,
    pub idler_photon_clicks: u64,
    pub idler_dark_clicks: u64,
    /// Signal photons lost before the crystal.
    pub signal_filtered: u64,
    pub signal_echoed: u64,
    pub signal_transmitted: u64,
    pub signal_absorbed: u64,
    pub signal_pair_clicks: u64,
    pub signal_noise_clicks: u64,
    pub signal_dark_clicks: u64,
    /// Total pump-off time from herald gating, ps.
    pub gated_off_ps: u64,
}

impl AddAssign for SimStats {
    fn add_assign(&mut self, o: SimStats) {
        self.slices += o.slices;
        self.pairs_emitted += o.pairs_emitted;
        self.pairs_gated += o.pairs_gated;
        self.noise_emitted += o.noise_emitted;
        self.noise_gated += o.noise_gated;
        self.idler_photon_clicks += o.idler_photon_clicks;
        self.idler_dark_clicks += o.idler_dark_clicks;
        self.signal_filtered += o.signal_filtered;
        self.signal_echoed += o.signal_echoed;
        self.signal_transmitted += o.signal_transmitted;
        self.signal_absorbed += o.signal_absorbed;
        self.signal_pair_clicks += o.signal_pair_clicks;
        self.signal_noise_clicks += o.signal_noise_clicks;
        self.signal_dark_clicks += o.signal_dark_clicks;
        self.gated_off_ps += o.gated_off_ps;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    /// Idler (herald) clicks, sorted.
    pub idler: Vec<Time>,
    /// Signal clicks, sorted.
    pub signal: Vec<Time>,
    pub stats: SimStats,
    pub duration: Time,
}

impl SimulationOutput {
    /// Both channels in one time-ordered record list; idler first on ties.
    pub fn records(&self) -> Vec<TimestampRecord> {
        let mut out = Vec::with_capacity(self.idler.len() + self.signal.len());
        let (mut i, mut j) = (0, 0);
        while i < self.idler.len() || j < self.signal.len() {
            let take_idler = j == self.signal.len()
                || (i < self.idler.len() && self.idler[i] <= self.signal[j]);
            if take_idler {
                out.push(TimestampRecord { channel: IDLER_CHANNEL, time: self.idler[i] });
                i += 1;
            } else {
                out.push(TimestampRecord { channel: SIGNAL_CHANNEL, time: self.signal[j] });
                j += 1;
            }
        }
        out
    }
}

/// Independent slices covering `[0, duration)`.
pub fn slices(source: &SourceParams, duration: Time) -> Vec<Interval> {
    let mut bounds = vec![Time::ZERO];
    if source.duty.is_always_on() {
        let mut t = CONTINUOUS_SLICE;
        while t < duration {
            bounds.push(t);
            t = t + CONTINUOUS_SLICE;
        }
    } else {
        let off = source.duty.off_len();
        let mut k = 1;
        loop {
            let t = Time(k * source.duty.period.ps()) + off;
            if t >= duration {
                break;
            }
            bounds.push(t);
            k += 1;
        }
    }
    bounds.push(duration);
    bounds.windows(2).map(|w| Interval::new(w[0], w[1])).collect()
}

/// Pair candidates over several disjoint windows, in time order.
struct PairStream {
    windows: std::vec::IntoIter<Interval>,
    current: Option<PairGenerator>,
    params: SourceParams,
}

impl PairStream {
    fn new(params: &SourceParams, windows: Vec<Interval>) -> Self {
        PairStream {
            windows: windows.into_iter(),
            current: None,
            params: params.clone(),
        }
    }

    fn next(&mut self, rng: &mut StreamRng) -> Option<PairCandidate> {
        loop {
            if let Some(g) = self.current.as_mut() {
                if let Some(c) = g.next_pair(rng) {
                    return Some(c);
                }
            }
            let w = self.windows.next()?;
            self.current = Some(PairGenerator::new(&self.params, w));
        }
    }
}

/// Poisson arrivals over several disjoint windows, in time order.
struct ArrivalStream {
    windows: std::vec::IntoIter<Interval>,
    current: Option<PoissonClock>,
    rate: f64,
}

impl ArrivalStream {
    fn new(rate: f64, windows: Vec<Interval>) -> Self {
        ArrivalStream {
            windows: windows.into_iter(),
            current: None,
            rate,
        }
    }

    fn next(&mut self, rng: &mut StreamRng) -> Option<Time> {
        loop {
            if let Some(c) = self.current.as_mut() {
                if let Some(t) = c.next_arrival(rng) {
                    return Some(t);
                }
            }
            let w = self.windows.next()?;
            self.current = Some(PoissonClock::new(self.rate, w));
        }
    }
}

struct SliceOutput {
    idler: Vec<Time>,
    signal: Vec<Time>,
    stats: SimStats,
}

fn simulate_slice(setup: &SimulationSetup, model: &StorageModel, index: usize, span: Interval) -> SliceOutput {
    let k = index as u64;
    let seed = setup.seed;
    let mut rng_source = stream(seed, names::SOURCE, k);
    let mut rng_noise = stream(seed, names::NOISE, k);
    let mut rng_chain_i = stream(seed, names::CHAIN_IDLER, k);
    let mut rng_det_i = stream(seed, names::DETECTOR_IDLER, k);
    let mut rng_dark_i = stream(seed, names::DARK_IDLER, k);
    let mut rng_chain_s = stream(seed, names::CHAIN_SIGNAL, k);
    let mut rng_mem = stream(seed, names::MEMORY, k);
    let mut rng_det_s = stream(seed, names::DETECTOR_SIGNAL, k);

    let source = &setup.source;
    let chain = &setup.chain;
    let mut stats = SimStats { slices: 1, ..SimStats::default() };

    let pump_windows = source.duty.on_intervals(span);
    let mut pairs = PairStream::new(source, pump_windows.clone());
    let mut noise = ArrivalStream::new(source.noise_rate(), pump_windows);
    let idler_spec = &setup.idler_detector;
    let mut darks = ArrivalStream::new(idler_spec.dark_rate, idler_spec.gate.on_intervals(span));

    let mut next_pair = pairs.next(&mut rng_source);
    let mut next_noise = noise.next(&mut rng_noise);
    let mut next_dark = darks.next(&mut rng_dark_i);

    let mut gate = GateSchedule::new();
    let mut idler_clicks = Vec::new();
    let mut signal_events: Vec<PhotonEvent> = Vec::new();
    let mut pair_id = k << PAIR_ID_SHIFT;

    let herald = |t: Time, gate: &mut GateSchedule, clicks: &mut Vec<Time>| {
        clicks.push(t);
        if source.gating {
            gate.push(herald_off_interval(t, setup.memory.storage_time, source.gate_lead, source.gate_hold));
        }
    };

    loop {
        let tp = next_pair.map_or(u64::MAX, |c| c.time.ps());
        let td = next_dark.map_or(u64::MAX, |t| t.ps());
        let tn = next_noise.map_or(u64::MAX, |t| t.ps());
        if tp == u64::MAX && td == u64::MAX && tn == u64::MAX {
            break;
        }
        if tp <= td && tp <= tn {
            let c = next_pair.expect("pair present");
            if gate.contains(c.time) {
                stats.pairs_gated += 1;
            } else {
                stats.pairs_emitted += 1;
                let (idler, signal) = c.events(pair_id);
                pair_id += 1;
                let survives = rng_chain_i.random::<f64>() < chain.idler.survival(idler.mode.as_ref());
                if survives && idler_spec.registers(idler.time, &mut rng_det_i) {
                    stats.idler_photon_clicks += 1;
                    herald(idler.time, &mut gate, &mut idler_clicks);
                }
                signal_events.push(signal);
            }
            next_pair = pairs.next(&mut rng_source);
        } else if td <= tn {
            stats.idler_dark_clicks += 1;
            herald(Time(td), &mut gate, &mut idler_clicks);
            next_dark = darks.next(&mut rng_dark_i);
        } else {
            let t = Time(tn);
            if gate.contains(t) {
                stats.noise_gated += 1;
            } else {
                stats.noise_emitted += 1;
                signal_events.push(PhotonEvent {
                    arm: Arm::Signal,
                    time: t,
                    mode: None,
                    origin: Origin::BroadbandNoise,
                });
            }
            next_noise = noise.next(&mut rng_noise);
        }
    }
    stats.gated_off_ps = gate
        .intervals()
        .iter()
        .filter_map(|iv| iv.intersect(&span))
        .map(|iv| iv.len().ps())
        .sum();

    let post_memory = path_transmission(&chain.post_memory);
    let mut arrivals: Vec<(Time, bool)> = Vec::with_capacity(signal_events.len() / 4);
    for ev in &signal_events {
        if rng_chain_s.random::<f64>() >= chain.signal.survival(ev.mode.as_ref()) {
            stats.signal_filtered += 1;
            continue;
        }
        let outcome = storage_transform(ev, model, chain, &mut rng_mem);
        match outcome.disposition {
            Disposition::Echoed => stats.signal_echoed += 1,
            Disposition::Transmitted => stats.signal_transmitted += 1,
            Disposition::Absorbed => {
                stats.signal_absorbed += 1;
                continue;
            }
        }
        if rng_chain_s.random::<f64>() < post_memory {
            arrivals.push((outcome.exit_time, matches!(ev.origin, Origin::BroadbandNoise)));
        }
    }
    arrivals.sort_unstable();

    let signal_spec = &setup.signal_detector;
    let dark = signal_spec.dark_counts(span, &mut rng_det_s);
    stats.signal_dark_clicks = dark.len() as u64;
    let mut photons = Vec::with_capacity(arrivals.len() / 2);
    for &(t, is_noise) in &arrivals {
        if signal_spec.registers(t, &mut rng_det_s) {
            photons.push(t);
            if is_noise {
                stats.signal_noise_clicks += 1;
            } else {
                stats.signal_pair_clicks += 1;
            }
        }
    }
    SliceOutput {
        idler: idler_clicks,
        signal: merge_sorted(&photons, &dark),
        stats,
    }
}

/// Runs the full simulation. Output does not depend on `mode`.
pub fn simulate(setup: &SimulationSetup, mode: ExecMode) -> SimulationOutput {
    let model = StorageModel::new(&setup.memory, &setup.chain);
    let spans = slices(&setup.source, setup.duration);
    let parts = map_indexed(mode, spans.len(), |k| simulate_slice(setup, &model, k, spans[k]));
    let mut stats = SimStats::default();
    let mut idler = Vec::new();
    let mut signal = Vec::new();
    for p in parts {
        stats += p.stats;
        idler.extend(p.idler);
        signal.extend(p.signal);
    }
    // Echoes and late signal photons may cross into the next slice.
    if !signal.windows(2).all(|w| w[0] <= w[1]) {
        signal.sort_unstable();
    }
    SimulationOutput {
        idler,
        signal,
        stats,
        duration: setup.duration,
    }
}
