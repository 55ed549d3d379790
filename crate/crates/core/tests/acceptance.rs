//! Acceptance checks. Runs without the libtest harness so that every check
//! prints exactly one PASS/FAIL line; the process fails if any check fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, Poisson};

use afcsim::analysis::stats::{spearman, spearman_p_negative};
use afcsim::analysis::{
    cauchy_schwarz_r, dichroism_fit, g2_auto_theory, g2_input_prediction, generated_rate,
    synthetic_scan, visibility_for_ratio, visibility_from_g2, BackgroundBudget,
    EfficiencyBudget, ScanPoint, WindowAveraging,
};
use afcsim::chain::{path_transmission, ChainConfig, DichroismModel, LossTable};
use afcsim::config::{parse_config, validate_config, AcquisitionKind, ExperimentConfig};
use afcsim::memory::{afc_efficiency_analytic, comb_profile, rephasing_amplitude, CombParams};
use afcsim::rng::stream;
use afcsim::scenario::{analyze_streams, echo_efficiency, run_scenario, simulate_acquisition, Metrics, RunOptions};
use afcsim::timestamps::{read_timestamps, write_timestamps, Format, TimestampRecord};
use afcsim::{ExecMode, Time};

// Tolerances. Closed-form values are compared against the rounding of the
// quoted figure; Monte Carlo checks use the stated number of sigmas.
const ROUND_3DP: f64 = 0.0005;
const ROUND_2DP: f64 = 0.005;
const ROUND_1DP: f64 = 0.05;
const ROUND_PCT: f64 = 0.005;
const C_G_EXPECTED_HZ: f64 = 2_900.0;
const C_G_ROUNDING_HZ: f64 = 50.0;
const C_G_QUOTED_HZ: f64 = 2_800.0;
const C_G_QUOTED_REL: f64 = 0.10;
const DEPHASING_REL_AT_REFERENCE: f64 = 0.02;
const DEPHASING_REL_SWEEP: f64 = 0.05;
const UNCORRELATED_SIGMAS: f64 = 3.0;
const ECHO_RATIO_SIGMAS: f64 = 5.0;
const SPEARMAN_ALPHA: f64 = 0.05;
const TEMPORAL_FILTER_SIGMAS: f64 = 3.0;
const HERALD_DOUBLING: f64 = 2.0;
const HERALD_DOUBLING_REL: f64 = 0.10;
const COINCIDENCE_SIGMAS: f64 = 3.0;
const G2_ORDER_SIGMAS: f64 = 3.0;
const DICHROISM_R: f64 = 0.013;
const DICHROISM_V: f64 = 0.90;
const DICHROISM_V_TOL: f64 = 0.01;
const DICHROISM_R_REL: f64 = 0.10;

const BUDGET_CLOSED_FORM: Duration = Duration::from_secs(1);
const BUDGET_NUMERIC: Duration = Duration::from_secs(10);
const BUDGET_MONTE_CARLO: Duration = Duration::from_secs(60);

struct Outcome {
    failed: Vec<String>,
    total: usize,
}

impl Outcome {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        self.total += 1;
        println!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }

    fn timed(&mut self, id: &str, elapsed: Duration, budget: Duration) {
        self.check(
            id,
            elapsed <= budget,
            format!("{:.2} s (budget {} s)", elapsed.as_secs_f64(), budget.as_secs()),
        );
    }
}

fn near(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn config(text: &str) -> ExperimentConfig {
    validate_config(parse_config(text).expect("scenario parses")).expect("scenario validates")
}

fn acquire(cfg: &ExperimentConfig, kind: AcquisitionKind, point: u64) -> Metrics {
    let label = kind.as_str();
    let acq = simulate_acquisition(cfg, kind, point, label, ExecMode::default());
    let (_, m) = analyze_streams(cfg, kind, label, &acq.output.idler, &acq.output.signal, ExecMode::default())
        .expect("analysis runs");
    m
}

fn g2_of(m: &Metrics) -> (f64, f64) {
    let c = m.correlation.as_ref().expect("g2 defined");
    (c.g2, c.sigma_g2)
}

// ---------------------------------------------------------------------------

fn closed_form(out: &mut Outcome) {
    let start = Instant::now();

    let comb = CombParams {
        gamma_khz: 76.0,
        delta_khz: 488.0,
        d: 4.9,
        d0: 0.56,
        ..CombParams::default()
    };
    let eta = afc_efficiency_analytic(&comb);
    out.check(
        "1.1 echo efficiency closed form",
        near(eta, 0.131, ROUND_3DP) && near(eta, 0.13, 0.03),
        format!("{eta:.4} vs 0.131, quoted 0.13 ± 0.03"),
    );

    let c_g = generated_rate(0.83, &EfficiencyBudget::reported()).unwrap();
    out.check(
        "1.2 generated pair rate per mW",
        near(c_g, C_G_EXPECTED_HZ, C_G_ROUNDING_HZ) && near(c_g, C_G_QUOTED_HZ, C_G_QUOTED_REL * C_G_QUOTED_HZ),
        format!("{:.0} Hz/mW vs 2.9 kHz/mW, quoted 2.8 kHz/mW ± 10 %", c_g),
    );

    // 8.7²/(1.14·1.07) = 62.0508 is usually written 62.0; the exact
    // quotient is the oracle here and the quoted ranges are the tolerance.
    let r5 = cauchy_schwarz_r(8.7, 1.14, 1.07).unwrap();
    let r2 = cauchy_schwarz_r(12.6, 1.09, 1.03).unwrap();
    out.check(
        "1.3 Cauchy-Schwarz parameter",
        near(r5, 75.69 / 1.2198, 1e-9)
            && near(r5, 61.0, 2.0)
            && near(r2, 141.4, ROUND_1DP)
            && near(r2, 158.76 / 1.1227, 1e-9)
            && near(r2, 142.0, 10.0),
        format!("R = {r5:.2} (quoted 61 ± 2), {r2:.2} (quoted 142 ± 10)"),
    );

    let (g0, gw) = g2_auto_theory(
        &BackgroundBudget::from_ratios(0.85, 0.98, Time::from_ns(265)),
        Time::from_ns(400),
        WindowAveraging::Excess,
    );
    out.check(
        "1.4 auto-correlation model",
        near(g0, 1.27, ROUND_2DP) && near(gw, 1.19, ROUND_2DP),
        format!("g(0) = {g0:.4}, g(400 ns) = {gw:.4} vs 1.27, 1.19"),
    );

    let p1 = g2_input_prediction(17.4, 0.021);
    let p2 = g2_input_prediction(15.0, 0.034);
    out.check(
        "1.5 input g2 prediction",
        near(p1, 13.0, ROUND_1DP) && near(p1, 13.0, 5.0) && near(p2, 10.3, ROUND_1DP) && near(p2, 10.0, 3.0),
        format!("{p1:.3} (quoted 13 ± 5), {p2:.3} (quoted 10 ± 3)"),
    );

    let eta_s = path_transmission(&LossTable::signal_default());
    let eta_i = path_transmission(&LossTable::idler_default());
    let eta_loss = EfficiencyBudget::from_chain(&ChainConfig::default(), 0.32, 0.10, 1.0, 0.5).eta_loss;
    out.check(
        "1.6 loss-table products",
        near(eta_s, 0.176, ROUND_3DP)
            && near(eta_s, 0.18, ROUND_PCT)
            && near(eta_i, 0.223, ROUND_3DP)
            && near(eta_i, 0.22, ROUND_PCT)
            && (eta_loss - 0.225).abs() < 1e-12,
        format!("eta_s = {eta_s:.6}, eta_i = {eta_i:.6}, eta_loss = {eta_loss}"),
    );

    let v = visibility_from_g2(12.6);
    out.check(
        "1.7 visibility from g2",
        near(v, 0.853, ROUND_3DP) && (0.67..=0.9).contains(&v),
        format!("V(12.6) = {v:.4}, quoted range [0.67, 0.9]"),
    );

    out.timed("1.8 closed-form runtime", start.elapsed(), BUDGET_CLOSED_FORM);
}

fn numeric_oracle(out: &mut Outcome) {
    let start = Instant::now();
    let dephasing = |comb: &CombParams| -> (f64, f64) {
        let profile = comb_profile(comb, 40).expect("valid comb");
        let amp = rephasing_amplitude(&profile, comb.storage_time()).expect("normalizable");
        let f = comb.finesse();
        (amp * amp, (-7.0 / (f * f)).exp())
    };

    let reference = CombParams {
        gamma_khz: 76.0,
        delta_khz: 488.0,
        ..CombParams::default()
    };
    let (num, closed) = dephasing(&reference);
    let rel = (num / closed - 1.0).abs();
    out.check(
        "2.1 dephasing factor at F = 6.42",
        rel <= DEPHASING_REL_AT_REFERENCE,
        format!("numeric {num:.5} vs closed form {closed:.5}, relative {rel:.4} (tol {DEPHASING_REL_AT_REFERENCE})"),
    );

    let mut worst = (0.0f64, 0.0f64);
    for k in 0..=34 {
        let f = 3.0 + 0.5 * k as f64;
        let comb = CombParams {
            gamma_khz: 500.0 / f,
            delta_khz: 500.0,
            ..CombParams::default()
        };
        let (num, closed) = dephasing(&comb);
        let rel = (num / closed - 1.0).abs();
        if rel > worst.1 {
            worst = (f, rel);
        }
    }
    out.check(
        "2.2 dephasing factor for F in [3, 20]",
        worst.1 <= DEPHASING_REL_SWEEP,
        format!("worst relative deviation {:.4} at F = {} (tol {DEPHASING_REL_SWEEP})", worst.1, worst.0),
    );
    out.timed("2.3 numeric oracle runtime", start.elapsed(), BUDGET_NUMERIC);
}

fn uncorrelated(out: &mut Outcome) {
    let start = Instant::now();
    // No pairs and no pump noise: both detectors only see independent
    // Poissonian dark counts.
    let cfg = config(
        "run.seed = 101\nrun.duration = 60 s\nsource.pair_rate_per_mw = 0\nsource.gating = false\n\
         detector.idler.dark_rate = 20 kHz\ndetector.signal.dark_rate = 20 kHz\n\
         memory.mode = transparency\nscenario.acquisitions = input\nanalysis.autocorrelation = false",
    );
    let m = acquire(&cfg, AcquisitionKind::Input, 0);
    let (g2, sigma) = g2_of(&m);
    out.check(
        "3.1 uncorrelated streams give g2 = 1",
        (g2 - 1.0).abs() <= UNCORRELATED_SIGMAS * sigma,
        format!(
            "g2 = {g2:.4} ± {sigma:.4} over {} events",
            m.n_idler + m.n_signal
        ),
    );
    out.timed("3.1 runtime", start.elapsed(), BUDGET_MONTE_CARLO);
}

fn echo_delay_and_ratio(out: &mut Outcome) {
    let start = Instant::now();
    // Sharp pair correlation and 1 ns bins centred on whole nanoseconds, so
    // the echo peak sits in one bin whose centre is the storage time.
    let cfg = config(
        "run.seed = 102\nrun.duration = 300 s\nsource.correlation_time = 1 ns\n\
         source.noise_rate_per_mw = 0\ndetector.signal.dark_rate = 0 Hz\ndetector.idler.dark_rate = 0 Hz\n\
         detector.signal.efficiency = 1\ndetector.idler.efficiency = 1\n\
         memory.efficiency_source = analytic\nmemory.storage_time = 2 us\n\
         analysis.bin = 1 ns\nanalysis.hist_min = -5000.5 ns\nanalysis.hist_max = 9999.5 ns\n\
         analysis.autocorrelation = false",
    );
    let tau = cfg.memory.storage_time;
    let spec = cfg.histogram_spec().unwrap();
    let mut metrics = Vec::new();
    let mut echo_peak = None;
    let mut events = 0;
    for kind in [AcquisitionKind::Input, AcquisitionKind::Echo] {
        let acq = simulate_acquisition(&cfg, kind, 0, kind.as_str(), ExecMode::default());
        events += acq.output.stats.pairs_emitted;
        let (hist, m) = analyze_streams(&cfg, kind, kind.as_str(), &acq.output.idler, &acq.output.signal, ExecMode::default())
            .unwrap();
        if kind == AcquisitionKind::Echo {
            let half = tau.ps() as f64 / 2.0;
            echo_peak = (0..hist.counts.len())
                .filter(|&k| hist.bin_center_ps(k) > half)
                .max_by_key(|&k| (hist.counts[k], std::cmp::Reverse(k)))
                .map(|k| hist.bin_center_ps(k));
        }
        metrics.push(m);
    }
    let peak = echo_peak.expect("echo region populated");
    out.check(
        "3.2 echo peak at the storage time",
        peak == tau.ps() as f64,
        format!("peak bin centre {} ps vs storage time {} ps (bin {} ps)", peak, tau.ps(), spec.bin_ps),
    );

    let eta = cfg.memory.echo_efficiency();
    let (measured, _) = echo_efficiency(&metrics[0], &metrics[1]).expect("both windows populated");
    let n_in = metrics[0].correlation.as_ref().unwrap().coincidences as f64;
    let n_echo = metrics[1].correlation.as_ref().unwrap().coincidences as f64;
    // Binomial spread of the echo count given its trials, plus the counting
    // error of the input normalization from the independent run.
    let sigma = measured * ((1.0 - eta) / n_echo + 1.0 / n_in).sqrt();
    out.check(
        "3.3 echo/input ratio equals the echo efficiency",
        (measured - eta).abs() <= ECHO_RATIO_SIGMAS * sigma,
        format!(
            "{measured:.5} ± {sigma:.5} vs configured {eta:.5} ({:.2} sigma; {} input, {} echo coincidences; {} pairs)",
            (measured - eta) / sigma,
            n_in,
            n_echo,
            events
        ),
    );
    out.timed("3.2-3.3 runtime", start.elapsed(), BUDGET_MONTE_CARLO);
}

fn pump_sweep(out: &mut Outcome) {
    let start = Instant::now();
    let base = config(
        "run.seed = 103\nrun.duration = 60 s\nsource.noise_ratio = 2.2\n\
         detector.signal.efficiency = 1\ndetector.idler.efficiency = 1\n\
         memory.storage_time = 2 us\nanalysis.autocorrelation = false",
    );
    let pumps = [0.5, 1.0, 2.0, 4.0, 8.0];
    let g2: Vec<f64> = pumps
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut cfg = base.clone();
            cfg.source.pump_power_mw = p;
            g2_of(&acquire(&cfg, AcquisitionKind::Input, k as u64)).0
        })
        .collect();
    let rho = spearman(&pumps, &g2);
    let p = spearman_p_negative(&pumps, &g2);
    out.check(
        "3.4 g2 falls with pump power",
        rho < 0.0 && p < SPEARMAN_ALPHA,
        format!(
            "g2 = {:?} at {:?} mW, rho = {rho:.3}, one-sided p = {p:.4} (alpha {SPEARMAN_ALPHA})",
            g2.iter().map(|g| (g * 100.0).round() / 100.0).collect::<Vec<_>>(),
            pumps
        ),
    );
    out.timed("3.4 runtime", start.elapsed(), BUDGET_MONTE_CARLO);
}

fn temporal_filter(out: &mut Outcome) {
    let start = Instant::now();
    let cfg = config(
        "run.seed = 104\nrun.duration = 300 s\nsource.noise_ratio = 2.2\n\
         detector.signal.dark_rate = 0 Hz\ndetector.idler.dark_rate = 0 Hz\n\
         detector.signal.efficiency = 1\ndetector.idler.efficiency = 1\n\
         memory.efficiency_source = analytic\nmemory.storage_time = 4 us\n\
         analysis.noise_width = 2.8 us\nanalysis.autocorrelation = false",
    );
    let input = acquire(&cfg, AcquisitionKind::Input, 0);
    let echo = acquire(&cfg, AcquisitionKind::Echo, 0);
    let (gi, si) = g2_of(&input);
    let (ge, se) = g2_of(&echo);
    let z = (ge - gi) / (si * si + se * se).sqrt();
    out.check(
        "3.5 echo g2 above input g2",
        z >= TEMPORAL_FILTER_SIGMAS,
        format!("echo {ge:.2} ± {se:.2} vs input {gi:.2} ± {si:.2} ({z:.2} sigma)"),
    );
    out.timed("3.5 runtime", start.elapsed(), BUDGET_MONTE_CARLO);
}

fn filter_cavity_toggle(out: &mut Outcome) {
    let start = Instant::now();
    // The idler detector keeps its real efficiency: a faster herald rate
    // would keep the pump switched off for a large part of the run.
    let with = config(
        "run.seed = 105\nrun.duration = 1200 s\nsource.noise_ratio = 2.2\n\
         detector.signal.efficiency = 1\nmemory.storage_time = 4 us\n\
         analysis.noise_width = 2.8 us\nanalysis.autocorrelation = false",
    );
    let without = with.without_filter_cavity();
    let a = acquire(&with, AcquisitionKind::Echo, 0);
    let b = acquire(&without, AcquisitionKind::Echo, 0);

    let herald_ratio = b.n_idler as f64 / a.n_idler as f64;
    out.check(
        "3.6 heralds double without the filter cavity",
        near(herald_ratio, HERALD_DOUBLING, HERALD_DOUBLING_REL * HERALD_DOUBLING),
        format!("{} -> {} heralds, ratio {herald_ratio:.3} (expected 2 ± 10 %)", a.n_idler, b.n_idler),
    );

    let na = a.correlation.as_ref().unwrap().coincidences as f64;
    let nb = b.correlation.as_ref().unwrap().coincidences as f64;
    let z = (nb - na) / (na + nb).sqrt();
    out.check(
        "3.7 window coincidences unchanged without the filter cavity",
        z.abs() <= COINCIDENCE_SIGMAS,
        format!("{na} -> {nb} coincidences ({z:.2} sigma)"),
    );

    let (ga, sa) = g2_of(&a);
    let (gb, sb) = g2_of(&b);
    let zg = (ga - gb) / (sa * sa + sb * sb).sqrt();
    out.check(
        "3.8 echo g2 lower without the filter cavity",
        zg >= G2_ORDER_SIGMAS,
        format!("with {ga:.2} ± {sa:.2}, without {gb:.2} ± {sb:.2} ({zg:.2} sigma)"),
    );
    out.timed("3.6-3.8 runtime", start.elapsed(), BUDGET_MONTE_CARLO);
}

fn dichroism_round_trip(out: &mut Outcome) {
    let model = DichroismModel::default();
    let v_true = visibility_for_ratio(&model, DICHROISM_R);

    let exact = synthetic_scan(&model, DICHROISM_R, 1e5, 10.0);
    let fit = dichroism_fit(&exact, &model).unwrap();
    out.check(
        "4.1 dichroism fit of the expected scan",
        near(fit.visibility, DICHROISM_V, DICHROISM_V_TOL) && (fit.ratio / DICHROISM_R - 1.0).abs() <= DICHROISM_R_REL,
        format!("V = {:.4} (model {v_true:.4}), r = {:.5}", fit.visibility, fit.ratio),
    );

    let mut rng = stream(104, "dichroism", 0);
    let sampled: Vec<ScanPoint> = exact
        .iter()
        .map(|p| ScanPoint {
            theta_deg: p.theta_deg,
            counts: Poisson::new(p.counts).unwrap().sample(&mut rng),
        })
        .collect();
    let fit = dichroism_fit(&sampled, &model).unwrap();
    out.check(
        "4.2 dichroism fit of a Poisson-sampled scan",
        near(fit.visibility, DICHROISM_V, DICHROISM_V_TOL) && (fit.ratio / DICHROISM_R - 1.0).abs() <= DICHROISM_R_REL,
        format!("V = {:.4}, r = {:.5} (tol {DICHROISM_V_TOL}, {DICHROISM_R_REL} relative)", fit.visibility, fit.ratio),
    );
}

fn read_dir_file(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn file_formats(out: &mut Outcome) {
    let cfg = config("run.seed = 106\nrun.duration = 2 s\nsource.noise_ratio = 2.2");
    let acq = simulate_acquisition(&cfg, AcquisitionKind::Input, 0, "input", ExecMode::default());
    let records: Vec<TimestampRecord> = acq.output.records();
    for format in [Format::Binary, Format::Csv] {
        let mut first = Vec::new();
        write_timestamps(&records, format, &mut first).unwrap();
        let back = read_timestamps(format, first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_timestamps(&back.records, format, &mut second).unwrap();
        out.check(
            &format!("5.1 {} round trip", format.extension()),
            back.records == records && first == second && back.warnings.is_empty(),
            format!("{} records, {} bytes, byte-identical rewrite: {}", records.len(), first.len(), first == second),
        );
    }

    for format in ["binary", "csv"] {
        let dir = tempfile::tempdir().unwrap();
        let sim_dir = dir.path().join("sim");
        let ana_dir = dir.path().join("ana");
        let mut cfg = config(&format!(
            "run.seed = 107\nrun.duration = 20 s\nrun.format = {format}\nsource.noise_ratio = 2.2\n\
             scenario.mode = simulate+analyze"
        ));
        let sim = run_scenario(&cfg, &RunOptions::new(&sim_dir)).unwrap();
        cfg.scenario.mode = afcsim::config::RunMode::Analyze;
        let mut opts = RunOptions::new(&ana_dir);
        opts.timestamps = sim
            .files
            .iter()
            .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("timestamps_"))
            .cloned()
            .collect();
        run_scenario(&cfg, &opts).unwrap();
        let a = read_dir_file(&sim_dir.join("metrics.csv"));
        let b = read_dir_file(&ana_dir.join("metrics.csv"));
        let same_hist = ["input", "echo"].iter().all(|l| {
            let name = format!("histogram_{l}.csv");
            read_dir_file(&sim_dir.join(&name)) == read_dir_file(&ana_dir.join(&name))
        });
        out.check(
            &format!("5.2 analyze mode on re-ingested {format} output"),
            a == b && same_hist && opts.timestamps.len() == 2,
            format!("metrics.csv identical: {}, histograms identical: {same_hist}", a == b),
        );
    }
}

fn main() {
    // `cargo test` passes filter and formatting flags; `--list` must work
    // for tooling that enumerates tests.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut out = Outcome {
        failed: Vec::new(),
        total: 0,
    };
    closed_form(&mut out);
    numeric_oracle(&mut out);
    uncorrelated(&mut out);
    echo_delay_and_ratio(&mut out);
    pump_sweep(&mut out);
    temporal_filter(&mut out);
    filter_cavity_toggle(&mut out);
    dichroism_round_trip(&mut out);
    file_formats(&mut out);

    println!(
        "acceptance: {} checks, {} passed, {} failed",
        out.total,
        out.total - out.failed.len(),
        out.failed.len()
    );
    if !out.failed.is_empty() {
        println!("failed: {}", out.failed.join(", "));
        std::process::exit(1);
    }
}
