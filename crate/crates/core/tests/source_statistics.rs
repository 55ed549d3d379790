use afcsim::model::MODE_COUNT;
use afcsim::rng::stream;
use afcsim::source::{
    build_gate_schedule, herald_off_interval, sample_broadband_noise, sample_pair_emissions,
    CorrelationConvention, GateSchedule, SourceParams,
};
use afcsim::{Interval, PeriodicGate, Time};
use proptest::prelude::*;

fn continuous(rate_per_mw: f64) -> SourceParams {
    SourceParams {
        pump_power_mw: 1.0,
        pair_rate_per_mw: rate_per_mw,
        duty: PeriodicGate::always_on(),
        ..SourceParams::default()
    }
}

fn span(ms: u64) -> Interval {
    Interval::new(Time::ZERO, Time::from_ms(ms))
}

#[test]
fn pair_count_is_poissonian() {
    let p = continuous(50_000.0);
    let trials = 200;
    let counts: Vec<f64> = (0..trials)
        .map(|k| {
            let mut rng = stream(17, "test.count", k);
            sample_pair_emissions(&p, span(20), &GateSchedule::new(), 0, &mut rng).len() as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / trials as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    // 1000 expected per trial; the sample mean has σ ≈ 2.2.
    assert!((mean - 1000.0).abs() < 12.0, "mean {mean}");
    // Fano factor of a Poisson count; σ of the estimate is about 0.1.
    assert!((var / mean - 1.0).abs() < 0.35, "fano {}", var / mean);
}

#[test]
fn delays_follow_the_two_sided_exponential() {
    let p = continuous(200_000.0);
    let mut rng = stream(3, "test.delay", 0);
    let pairs = sample_pair_emissions(&p, span(100), &GateSchedule::new(), 0, &mut rng);
    let delays: Vec<f64> = pairs
        .iter()
        .map(|(i, s)| s.time.delay_from(i.time) as f64)
        .collect();
    let n = delays.len() as f64;
    let mean_abs = delays.iter().map(|d| d.abs()).sum::<f64>() / n;
    let mean = delays.iter().sum::<f64>() / n;
    let scale = p.delay_scale_ps();
    assert!((mean_abs / scale - 1.0).abs() < 0.02, "mean |delay| {mean_abs}");
    assert!(mean.abs() < 0.02 * scale, "mean delay {mean}");
    let beyond = delays.iter().filter(|d| d.abs() > scale).count() as f64 / n;
    assert!((beyond - (-1.0f64).exp()).abs() < 0.01, "tail fraction {beyond}");
}

#[test]
fn fwhm_convention_narrows_the_scale() {
    let a = continuous(1.0);
    let b = SourceParams {
        convention: CorrelationConvention::Fwhm,
        ..a.clone()
    };
    let ratio = a.delay_scale_ps() / b.delay_scale_ps();
    assert!((ratio - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn modes_are_equally_populated() {
    let p = continuous(240_000.0);
    let mut rng = stream(9, "test.modes", 0);
    let pairs = sample_pair_emissions(&p, span(100), &GateSchedule::new(), 0, &mut rng);
    let mut hist = [0usize; MODE_COUNT];
    for (i, s) in &pairs {
        let m = i.mode.expect("pair photons carry a mode");
        assert_eq!(Some(m), s.mode);
        hist[m.flat_index()] += 1;
    }
    let expected = pairs.len() as f64 / MODE_COUNT as f64;
    let chi2: f64 = hist.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 11 degrees of freedom, 0.1% critical value 31.3.
    assert!(chi2 < 31.3, "chi2 {chi2} for {hist:?}");
}

#[test]
fn duty_cycle_confines_emission() {
    let p = SourceParams {
        pump_power_mw: 1.0,
        pair_rate_per_mw: 100_000.0,
        noise_rate_per_mw: 50_000.0,
        duty: PeriodicGate::new(Time::from_ms(10), 0.45),
        ..SourceParams::default()
    };
    let mut rng = stream(4, "test.duty", 0);
    let pairs = sample_pair_emissions(&p, span(100), &GateSchedule::new(), 0, &mut rng);
    let noise = sample_broadband_noise(&p, span(100), &GateSchedule::new(), &mut rng);
    assert!(pairs.iter().all(|(i, _)| p.duty.is_on(i.time)));
    assert!(noise.iter().all(|e| p.duty.is_on(e.time)));
    let expected = 100_000.0 * 0.1 * 0.45;
    assert!((pairs.len() as f64 - expected).abs() < 5.0 * expected.sqrt());
}

#[test]
fn gated_intervals_emit_nothing() {
    let p = continuous(500_000.0);
    let heralds: Vec<Time> = (0..50).map(|k| Time::from_us(100 + 300 * k)).collect();
    let sched = build_gate_schedule(&heralds, Time::from_us(2), &p);
    let mut rng = stream(5, "test.gate", 0);
    let pairs = sample_pair_emissions(&p, span(20), &sched, 0, &mut rng);
    let noise = sample_broadband_noise(&SourceParams { noise_rate_per_mw: 500_000.0, ..p.clone() }, span(20), &sched, &mut rng);
    assert!(!pairs.is_empty());
    assert!(pairs.iter().all(|(i, _)| !sched.contains(i.time)));
    assert!(noise.iter().all(|e| !sched.contains(e.time)));
    let first = herald_off_interval(heralds[0], Time::from_us(2), p.gate_lead, p.gate_hold);
    assert_eq!(first.start, Time::from_ns(101_500));
    assert_eq!(first.len(), Time::from_us(20));
}

#[test]
fn pair_ids_are_unique_and_sequential() {
    let p = continuous(20_000.0);
    let mut rng = stream(6, "test.ids", 0);
    let pairs = sample_pair_emissions(&p, span(50), &GateSchedule::new(), 1000, &mut rng);
    for (k, (i, s)) in pairs.iter().enumerate() {
        assert_eq!(i.origin, s.origin);
        assert_eq!(i.origin, afcsim::model::Origin::Pair(1000 + k as u64));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedule_intervals_stay_sorted_and_disjoint(
        mut gaps in prop::collection::vec(1u64..50_000_000, 1..60),
        storage_ns in 100u64..5_000,
    ) {
        let p = continuous(1.0);
        let mut t = 0u64;
        let heralds: Vec<Time> = gaps.drain(..).map(|g| { t += g; Time::from_ps(t) }).collect();
        let sched = build_gate_schedule(&heralds, Time::from_ns(storage_ns), &p);
        let iv = sched.intervals();
        prop_assert!(iv.windows(2).all(|w| w[0].end < w[1].start));
        for h in &heralds {
            let off = herald_off_interval(*h, Time::from_ns(storage_ns), p.gate_lead, p.gate_hold);
            prop_assert!(sched.contains(off.start));
            prop_assert!(sched.contains(Time::from_ps(off.end.ps() - 1)));
        }
    }

    #[test]
    fn emission_is_deterministic_per_stream(seed in any::<u64>()) {
        let p = continuous(30_000.0);
        let a = sample_pair_emissions(&p, span(5), &GateSchedule::new(), 0, &mut stream(seed, "test.det", 0));
        let b = sample_pair_emissions(&p, span(5), &GateSchedule::new(), 0, &mut stream(seed, "test.det", 0));
        prop_assert_eq!(a, b);
    }
}
