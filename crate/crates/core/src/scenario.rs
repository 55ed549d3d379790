//! Scenario runner: simulated acquisitions, timestamp ingestion, analysis
//! and the CSV report tables.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{
    autocorrelation_g2, cauchy_schwarz_r, cross_correlation_histogram, dichroism_fit, g2_auto_theory,
    g2_input_prediction, g2_windowed, heralding_efficiency, visibility_from_g2, AnalysisError,
    BackgroundBudget, CorrelationHistogram, CorrelationResult, DelayWindow, DichroismFit,
    EfficiencyBudget, HeraldingEfficiency, ScanPoint,
};
use crate::config::{noise_windows, signal_window, AcquisitionKind, ConfigError, ExperimentConfig, RunMode};
use crate::detection::{IDLER_CHANNEL, SIGNAL_CHANNEL};
use crate::memory::{afc_efficiency_analytic, afc_efficiency_numeric, comb_profile, MemoryError, MemoryMode};
use crate::parallel::{map_indexed, ExecMode};
use crate::pipeline::{simulate, SimStats, SimulationOutput};
use crate::rng::{derive_seed, names, stream};
use crate::time::Time;
use crate::timestamps::{partition_channels, read_timestamps, write_timestamps, Format, ReadWarning, TimestampError};

/// Grid resolution used for exported and numeric comb profiles.
const PROFILE_SAMPLES_PER_GAMMA: usize = 40;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Timestamps {
        path: String,
        #[source]
        source: TimestampError,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("{0}")]
    MissingInput(String),
}

impl ScenarioError {
    /// Process exit status: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) | ScenarioError::MissingInput(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Timestamp files for analyze mode.
    pub timestamps: Vec<PathBuf>,
    /// Format of the timestamp files; inferred from the extension if unset.
    pub timestamp_format: Option<Format>,
    pub exec: ExecMode,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            timestamps: Vec::new(),
            timestamp_format: None,
            exec: ExecMode::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedStreams {
    pub idler: Vec<Time>,
    pub signal: Vec<Time>,
    pub records: usize,
    pub warnings: Vec<String>,
}

pub fn infer_format(path: &Path) -> Option<Format> {
    match path.extension()?.to_str()? {
        "csv" => Some(Format::Csv),
        "bin" | "binary" => Some(Format::Binary),
        _ => None,
    }
}

/// Reads a timestamp file into sorted idler and signal streams. Records on
/// other channels are counted and reported as warnings.
pub fn ingest_timestamps(path: &Path, format: Format) -> Result<IngestedStreams, ScenarioError> {
    let file = File::open(path).map_err(io_err(path))?;
    let outcome = read_timestamps(format, BufReader::new(file)).map_err(|source| ScenarioError::Timestamps {
        path: path.display().to_string(),
        source,
    })?;
    let mut warnings: Vec<String> = Vec::new();
    let unsorted = outcome
        .warnings
        .iter()
        .filter(|w| matches!(w, ReadWarning::NonMonotonic { .. }))
        .count();
    if unsorted > 0 {
        warnings.push(format!("{unsorted} records out of time order; streams were re-sorted"));
    }
    let mut channels = partition_channels(&outcome.records);
    for (ch, times) in &channels {
        if *ch != IDLER_CHANNEL && *ch != SIGNAL_CHANNEL {
            warnings.push(format!("ignoring {} records on unknown channel {ch}", times.len()));
        }
    }
    let mut take = |ch: u8| {
        let mut v = channels.remove(&ch).unwrap_or_default();
        if !v.windows(2).all(|w| w[0] <= w[1]) {
            v.sort_unstable();
        }
        v
    };
    Ok(IngestedStreams {
        idler: take(IDLER_CHANNEL),
        signal: take(SIGNAL_CHANNEL),
        records: outcome.records.len(),
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Analysis of one acquisition

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub label: String,
    pub kind: AcquisitionKind,
    pub pump_mw: f64,
    pub storage_time: Time,
    pub filter_cavity: bool,
    pub acquisition_time: Time,
    pub n_idler: u64,
    pub n_signal: u64,
    pub window: DelayWindow,
    pub correlation: Option<CorrelationResult>,
    pub heralding: Option<HeraldingEfficiency>,
    pub auto_signal: Option<CorrelationResult>,
    pub auto_idler: Option<CorrelationResult>,
}

impl Metrics {
    pub fn g2(&self) -> Option<f64> {
        self.correlation.as_ref().map(|c| c.g2)
    }

    /// Coincidences above the accidental level, per herald.
    pub fn excess_per_herald(&self) -> Option<(f64, f64)> {
        let c = self.correlation.as_ref()?;
        if self.n_idler == 0 {
            return None;
        }
        let n = self.n_idler as f64;
        let excess = c.coincidences as f64 - c.accidentals;
        let acc_var = if c.noise_counts > 0 {
            c.accidentals * c.accidentals / c.noise_counts as f64
        } else {
            0.0
        };
        Some((excess / n, (c.coincidences as f64 + acc_var).sqrt() / n))
    }

    pub fn cauchy_schwarz(&self) -> Option<f64> {
        let g = self.g2()?;
        cauchy_schwarz_r(g, self.auto_signal.as_ref()?.g2, self.auto_idler.as_ref()?.g2).ok()
    }

    pub fn coincidence_rate_per_mw(&self) -> Option<f64> {
        let c = self.correlation.as_ref()?;
        let t = self.acquisition_time.as_secs();
        if t > 0.0 && self.pump_mw > 0.0 {
            Some(c.coincidences as f64 / t / self.pump_mw)
        } else {
            None
        }
    }
}

pub const METRICS_HEADER: &str = "label,kind,pump_mw,storage_time_ns,filter_cavity,acquisition_s,\
window_center_ns,window_ns,n_idler,n_signal,coincidences,accidentals,g2,sigma_g2,p_i,p_s,p_si,\
visibility,heralding_raw,heralding_dc,coincidence_rate_hz_per_mw,g2_ss,sigma_g2_ss,g2_ii,sigma_g2_ii,\
cauchy_schwarz_r";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_row(m: &Metrics) -> String {
    let c = m.correlation.as_ref();
    let cols = [
        m.label.clone(),
        m.kind.as_str().into(),
        m.pump_mw.to_string(),
        m.storage_time.as_ns().to_string(),
        m.filter_cavity.to_string(),
        m.acquisition_time.as_secs().to_string(),
        (m.window.center_ps() as f64 / 1e3).to_string(),
        (m.window.width_ps() as f64 / 1e3).to_string(),
        m.n_idler.to_string(),
        m.n_signal.to_string(),
        c.map(|c| c.coincidences.to_string()).unwrap_or_default(),
        opt(c.map(|c| c.accidentals)),
        opt(c.map(|c| c.g2)),
        opt(c.map(|c| c.sigma_g2)),
        opt(c.map(|c| c.p_i)),
        opt(c.map(|c| c.p_s)),
        opt(c.map(|c| c.p_si)),
        opt(c.map(|c| visibility_from_g2(c.g2))),
        opt(m.heralding.map(|h| h.raw)),
        opt(m.heralding.map(|h| h.dark_corrected)),
        opt(m.coincidence_rate_per_mw()),
        opt(m.auto_signal.as_ref().map(|a| a.g2)),
        opt(m.auto_signal.as_ref().map(|a| a.sigma_g2)),
        opt(m.auto_idler.as_ref().map(|a| a.g2)),
        opt(m.auto_idler.as_ref().map(|a| a.sigma_g2)),
        opt(m.cauchy_schwarz()),
    ];
    cols.join(",")
}

pub fn metrics_csv(rows: &[Metrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in rows {
        s.push_str(&metrics_row(m));
        s.push('\n');
    }
    s
}

fn soft<T>(r: Result<T, AnalysisError>, what: &str, label: &str) -> Result<Option<T>, ScenarioError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(AnalysisError::EmptyNoiseWindow) | Err(AnalysisError::NonPositiveCorrection(_)) | Err(AnalysisError::ZeroDenominator(_)) => {
            log::warn!("{label}: {what} undefined");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn kind_index(kind: AcquisitionKind) -> u64 {
    match kind {
        AcquisitionKind::Input => 0,
        AcquisitionKind::Echo => 1,
    }
}

/// Histogram and metrics for one pair of click streams.
pub fn analyze_streams(
    cfg: &ExperimentConfig,
    kind: AcquisitionKind,
    label: &str,
    idler: &[Time],
    signal: &[Time],
    exec: ExecMode,
) -> Result<(CorrelationHistogram, Metrics), ScenarioError> {
    let spec = cfg.histogram_spec()?;
    let t = cfg.run.duration;
    let hist = cross_correlation_histogram(idler, signal, spec, t, exec)?;
    let window = signal_window(cfg, kind);
    let correlation = soft(g2_windowed(&hist, window, &noise_windows(cfg, kind)), "g2", label)?;

    let budget = EfficiencyBudget::from_chain(
        &cfg.chain(),
        cfg.signal_detector.efficiency,
        cfg.idler_detector.efficiency,
        cfg.source.duty.on_fraction,
        cfg.signal_detector_spec().gate.on_fraction,
    );
    let idler_spec = cfg.idler_detector_spec();
    let mean_dark = idler_spec.dark_rate * idler_spec.gate.on_fraction;
    let heralding = match &correlation {
        Some(c) => soft(
            heralding_efficiency(c.p_si, c.p_i, &budget, mean_dark, Time(c.window_ps)),
            "heralding efficiency",
            label,
        )?,
        None => None,
    };

    let (auto_signal, auto_idler) = if cfg.analysis.autocorrelation {
        let off = cfg.analysis.noise_offset.ps() as i64;
        let w = cfg.analysis.noise_width.ps() as i64;
        let sidebands = [DelayWindow::new(-off - w, -off), DelayWindow::new(off, off + w)];
        let zero = DelayWindow::centered(0, cfg.analysis.window);
        let auto = |stream_data: &[Time], which: u64| -> Result<Option<CorrelationResult>, ScenarioError> {
            let mut rng = stream(cfg.run.seed, names::SPLITTER, kind_index(kind) * 2 + which);
            soft(
                autocorrelation_g2(stream_data, &mut rng, spec, t, zero, &sidebands, exec).map(|(_, r)| r),
                "auto-correlation",
                label,
            )
        };
        (auto(signal, 0)?, auto(idler, 1)?)
    } else {
        (None, None)
    };

    let metrics = Metrics {
        label: label.to_string(),
        kind,
        pump_mw: cfg.source.pump_power_mw,
        storage_time: cfg.memory.storage_time,
        filter_cavity: cfg.filter.cavity,
        acquisition_time: t,
        n_idler: idler.len() as u64,
        n_signal: signal.len() as u64,
        window,
        correlation,
        heralding,
        auto_signal,
        auto_idler,
    };
    Ok((hist, metrics))
}

// ---------------------------------------------------------------------------
// Acquisitions

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub label: String,
    pub kind: AcquisitionKind,
    pub output: SimulationOutput,
}

/// Seed of acquisition `kind` at sweep point `point`.
pub fn acquisition_seed(master: u64, point: u64, kind: AcquisitionKind) -> u64 {
    derive_seed(derive_seed(master, names::SWEEP, point), "acquisition", kind_index(kind))
}

pub fn simulate_acquisition(
    cfg: &ExperimentConfig,
    kind: AcquisitionKind,
    point: u64,
    label: &str,
    exec: ExecMode,
) -> Acquisition {
    let setup = cfg.setup(kind, acquisition_seed(cfg.run.seed, point, kind));
    Acquisition {
        label: label.to_string(),
        kind,
        output: simulate(&setup, exec),
    }
}

fn kinds_for(cfg: &ExperimentConfig) -> Vec<AcquisitionKind> {
    let mut kinds = cfg.scenario.acquisitions.clone();
    if cfg.memory.mode != MemoryMode::Afc {
        kinds.retain(|k| *k == AcquisitionKind::Input);
    }
    kinds.sort();
    kinds.dedup();
    kinds
}

pub const SIMULATION_HEADER: &str = "label,kind,slices,pairs_emitted,pairs_gated,noise_emitted,noise_gated,\
idler_photon_clicks,idler_dark_clicks,signal_filtered,signal_echoed,signal_transmitted,signal_absorbed,\
signal_pair_clicks,signal_noise_clicks,signal_dark_clicks,gated_off_s";

fn simulation_row(label: &str, kind: AcquisitionKind, s: &SimStats) -> String {
    format!(
        "{label},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        kind.as_str(),
        s.slices,
        s.pairs_emitted,
        s.pairs_gated,
        s.noise_emitted,
        s.noise_gated,
        s.idler_photon_clicks,
        s.idler_dark_clicks,
        s.signal_filtered,
        s.signal_echoed,
        s.signal_transmitted,
        s.signal_absorbed,
        s.signal_pair_clicks,
        s.signal_noise_clicks,
        s.signal_dark_clicks,
        Time(s.gated_off_ps).as_secs()
    )
}

// ---------------------------------------------------------------------------
// Report tables

pub const FIG2B_HEADER: &str =
    "pump_mw,g2_input,sigma_g2_input,heralding_raw,heralding_dc,coincidence_rate_hz_per_mw,g2_echo,sigma_g2_echo";
pub const FIG3BC_HEADER: &str = "storage_time_us,filter_cavity,delta_khz,finesse,eta_measured,sigma_eta,\
eta_analytic,eta_numeric,eta_configured,g2_echo,sigma_g2_echo,n_idler_echo,coincidences_echo";
pub const TABLE_S3_HEADER: &str = "pump_mw,g2_si,sigma_g2_si,g2_ss,sigma_g2_ss,g2_ii,sigma_g2_ii,\
cauchy_schwarz_r,background_to_signal,g2_ss_theory_zero,g2_ss_theory_window";
pub const TABLE_S4_HEADER: &str =
    "pump_mw,g2_echo,sigma_g2_echo,ratio_r,visibility,g2_input_predicted,g2_input_measured,sigma_g2_input";
pub const DICHROISM_HEADER: &str = "polarization_deg,coincidences";

/// Echo-to-input ratio of excess coincidences per herald.
pub fn echo_efficiency(input: &Metrics, echo: &Metrics) -> Option<(f64, f64)> {
    let (a, sa) = input.excess_per_herald()?;
    let (b, sb) = echo.excess_per_herald()?;
    if a <= 0.0 {
        return None;
    }
    let eta = b / a;
    Some((eta, (sb * sb / (a * a) + eta * eta * sa * sa / (a * a)).sqrt()))
}

fn find<'a>(rows: &'a [Metrics], kind: AcquisitionKind) -> Option<&'a Metrics> {
    rows.iter().find(|m| m.kind == kind)
}

fn g2_pair(m: Option<&Metrics>) -> (Option<f64>, Option<f64>) {
    let c = m.and_then(|m| m.correlation.as_ref());
    (c.map(|c| c.g2), c.map(|c| c.sigma_g2))
}

fn fig2b_row(pump: f64, rows: &[Metrics]) -> String {
    let input = find(rows, AcquisitionKind::Input);
    let (g_in, s_in) = g2_pair(input);
    let (g_e, s_e) = g2_pair(find(rows, AcquisitionKind::Echo));
    [
        pump.to_string(),
        opt(g_in),
        opt(s_in),
        opt(input.and_then(|m| m.heralding.map(|h| h.raw))),
        opt(input.and_then(|m| m.heralding.map(|h| h.dark_corrected))),
        opt(input.and_then(|m| m.coincidence_rate_per_mw())),
        opt(g_e),
        opt(s_e),
    ]
    .join(",")
}

fn table_s3_row(cfg: &ExperimentConfig, rows: &[Metrics], stats: Option<&SimStats>) -> Option<String> {
    let m = find(rows, AcquisitionKind::Input)?;
    let b_over_s = stats.and_then(|s| {
        (s.signal_pair_clicks > 0)
            .then(|| (s.signal_noise_clicks + s.signal_dark_clicks) as f64 / s.signal_pair_clicks as f64)
    });
    let theory = b_over_s.map(|r| {
        g2_auto_theory(
            &BackgroundBudget::from_ratios(r, r, cfg.analysis.t_c),
            cfg.analysis.window,
            cfg.analysis.window_averaging,
        )
    });
    let (g, s) = g2_pair(Some(m));
    Some(
        [
            m.pump_mw.to_string(),
            opt(g),
            opt(s),
            opt(m.auto_signal.as_ref().map(|a| a.g2)),
            opt(m.auto_signal.as_ref().map(|a| a.sigma_g2)),
            opt(m.auto_idler.as_ref().map(|a| a.g2)),
            opt(m.auto_idler.as_ref().map(|a| a.sigma_g2)),
            opt(m.cauchy_schwarz()),
            opt(b_over_s),
            opt(theory.map(|t| t.0)),
            opt(theory.map(|t| t.1)),
        ]
        .join(","),
    )
}

// ---------------------------------------------------------------------------
// Output

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub metrics: Vec<Metrics>,
    pub warnings: Vec<String>,
}

impl Report {
    fn write(&mut self, dir: &Path, name: &str, contents: &str) -> Result<(), ScenarioError> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(io_err(&path))?;
        self.files.push(path);
        Ok(())
    }

    fn write_table(&mut self, dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<(), ScenarioError> {
        let mut s = String::from(header);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        self.write(dir, name, &s)
    }
}

fn write_timestamp_file(report: &mut Report, dir: &Path, acq: &Acquisition, format: Format) -> Result<(), ScenarioError> {
    let path = dir.join(format!("timestamps_{}.{}", acq.label, format.extension()));
    let file = File::create(&path).map_err(io_err(&path))?;
    write_timestamps(&acq.output.records(), format, file).map_err(io_err(&path))?;
    report.files.push(path);
    Ok(())
}

fn write_comb_profile(report: &mut Report, dir: &Path, cfg: &ExperimentConfig) -> Result<(), ScenarioError> {
    if cfg.memory.mode == MemoryMode::Afc {
        let profile = comb_profile(&cfg.memory.comb, PROFILE_SAMPLES_PER_GAMMA)?;
        report.write(dir, "comb_profile.csv", &profile.to_csv())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dichroism scan

/// Raw input-window coincidences versus polarization with the crystal
/// unprepared, and the fit of the resonant/non-resonant model.
pub fn dichroism_scan(
    cfg: &ExperimentConfig,
    exec: ExecMode,
) -> Result<(Vec<ScanPoint>, Option<DichroismFit>), ScenarioError> {
    let steps = (90.0 / cfg.scenario.dichroism_step_deg).round() as usize;
    let angles: Vec<f64> = (0..=steps)
        .map(|k| (k as f64 * cfg.scenario.dichroism_step_deg).min(90.0))
        .collect();
    let points = map_indexed(exec, angles.len(), |k| -> Result<ScanPoint, ScenarioError> {
        let mut c = cfg.clone();
        c.memory.mode = MemoryMode::Absorbing;
        c.crystal.polarization_deg = angles[k];
        c.analysis.autocorrelation = false;
        let acq = simulate_acquisition(&c, AcquisitionKind::Input, 1_000 + k as u64, "dichroism", exec);
        let spec = c.histogram_spec()?;
        let hist = cross_correlation_histogram(&acq.output.idler, &acq.output.signal, spec, c.run.duration, exec)?;
        let w = signal_window(&c, AcquisitionKind::Input);
        let counts: u64 = (0..hist.counts.len())
            .filter(|&b| {
                let centre = hist.bin_center_ps(b);
                centre >= w.start_ps as f64 && centre < w.end_ps as f64
            })
            .map(|b| hist.counts[b])
            .sum();
        Ok(ScanPoint {
            theta_deg: angles[k],
            counts: counts as f64,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let fit = soft(dichroism_fit(&points, &cfg.chain().dichroism), "dichroism fit", "scan")
        .or_else(|e| match e {
            ScenarioError::Analysis(AnalysisError::DegenerateFit(m)) => {
                log::warn!("dichroism fit degenerate: {m}");
                Ok(None)
            }
            other => Err(other),
        })?;
    Ok((points, fit))
}

// ---------------------------------------------------------------------------
// Modes

struct PointResult {
    cfg: ExperimentConfig,
    acquisitions: Vec<Acquisition>,
    metrics: Vec<Metrics>,
    histograms: Vec<(String, CorrelationHistogram)>,
}

fn run_point(cfg: &ExperimentConfig, point: u64, prefix: &str, exec: ExecMode) -> Result<PointResult, ScenarioError> {
    let mut acquisitions = Vec::new();
    let mut metrics = Vec::new();
    let mut histograms = Vec::new();
    for kind in kinds_for(cfg) {
        let label = if prefix.is_empty() {
            kind.as_str().to_string()
        } else {
            format!("{prefix}_{}", kind.as_str())
        };
        let acq = simulate_acquisition(cfg, kind, point, &label, exec);
        let (hist, m) = analyze_streams(cfg, kind, &label, &acq.output.idler, &acq.output.signal, exec)?;
        histograms.push((label, hist));
        metrics.push(m);
        acquisitions.push(acq);
    }
    Ok(PointResult {
        cfg: cfg.clone(),
        acquisitions,
        metrics,
        histograms,
    })
}

fn fmt_value(x: f64) -> String {
    x.to_string().replace('.', "p")
}

fn run_sweeps(cfg: &ExperimentConfig, opts: &RunOptions, report: &mut Report) -> Result<(), ScenarioError> {
    let dir = &opts.out_dir;
    let mut points: Vec<(String, ExperimentConfig)> = Vec::new();
    for &p in &cfg.scenario.sweep_pump_mw {
        let mut c = cfg.clone();
        c.source.pump_power_mw = p;
        points.push((format!("pump_{}mW", fmt_value(p)), c));
    }
    let n_pump = points.len();
    let cavity_variants: Vec<bool> = if cfg.scenario.compare_filter_cavity {
        vec![true, false]
    } else {
        vec![cfg.filter.cavity]
    };
    for &tau in &cfg.scenario.sweep_tau {
        for &cavity in &cavity_variants {
            let mut c = cfg.clone();
            c.set_storage_time(tau);
            c.filter.cavity = cavity;
            c.scenario.acquisitions = vec![AcquisitionKind::Input, AcquisitionKind::Echo];
            let tag = if cavity { "cavity" } else { "no_cavity" };
            points.push((format!("tau_{}ns_{tag}", tau.ps() / 1_000), c));
        }
    }
    let results = map_indexed(opts.exec, points.len(), |k| run_point(&points[k].1, k as u64, &points[k].0, opts.exec))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    for r in &results {
        for (label, h) in &r.histograms {
            report.write(dir, &format!("histogram_{label}.csv"), &h.to_csv())?;
        }
        report.metrics.extend(r.metrics.iter().cloned());
    }
    if n_pump > 0 {
        let pump_results = &results[..n_pump];
        let fig2b: Vec<String> = pump_results
            .iter()
            .map(|r| fig2b_row(r.cfg.source.pump_power_mw, &r.metrics))
            .collect();
        report.write_table(dir, "fig2b.csv", FIG2B_HEADER, &fig2b)?;
        let s3: Vec<String> = pump_results
            .iter()
            .filter_map(|r| {
                let stats = r.acquisitions.iter().find(|a| a.kind == AcquisitionKind::Input).map(|a| &a.output.stats);
                table_s3_row(&r.cfg, &r.metrics, stats)
            })
            .collect();
        report.write_table(dir, "tableS3.csv", TABLE_S3_HEADER, &s3)?;
    }
    if results.len() > n_pump {
        let mut rows = Vec::new();
        for r in &results[n_pump..] {
            let comb = r.cfg.memory.comb;
            let numeric = afc_efficiency_numeric(&comb_profile(&comb, PROFILE_SAMPLES_PER_GAMMA)?, r.cfg.memory.storage_time)?;
            let input = find(&r.metrics, AcquisitionKind::Input);
            let echo = find(&r.metrics, AcquisitionKind::Echo);
            let eta = input.zip(echo).and_then(|(i, e)| echo_efficiency(i, e));
            let (g, s) = g2_pair(echo);
            rows.push(
                [
                    r.cfg.memory.storage_time.as_us().to_string(),
                    r.cfg.filter.cavity.to_string(),
                    comb.delta_khz.to_string(),
                    comb.finesse().to_string(),
                    opt(eta.map(|e| e.0)),
                    opt(eta.map(|e| e.1)),
                    afc_efficiency_analytic(&comb).to_string(),
                    numeric.to_string(),
                    r.cfg.memory.echo_efficiency().to_string(),
                    opt(g),
                    opt(s),
                    echo.map(|e| e.n_idler.to_string()).unwrap_or_default(),
                    echo.and_then(|e| e.correlation.as_ref().map(|c| c.coincidences.to_string()))
                        .unwrap_or_default(),
                ]
                .join(","),
            );
        }
        report.write_table(dir, "fig3bc.csv", FIG3BC_HEADER, &rows)?;
    }
    Ok(())
}

fn run_simulation_modes(cfg: &ExperimentConfig, opts: &RunOptions, report: &mut Report, analyze: bool) -> Result<(), ScenarioError> {
    let dir = &opts.out_dir;
    let exec = opts.exec;
    let kinds = kinds_for(cfg);
    let acquisitions: Vec<Acquisition> = kinds
        .iter()
        .map(|&k| simulate_acquisition(cfg, k, 0, k.as_str(), exec))
        .collect();
    let mut sim_rows = Vec::new();
    for acq in &acquisitions {
        write_timestamp_file(report, dir, acq, cfg.run.format)?;
        sim_rows.push(simulation_row(&acq.label, acq.kind, &acq.output.stats));
    }
    report.write_table(dir, "simulation.csv", SIMULATION_HEADER, &sim_rows)?;
    write_comb_profile(report, dir, cfg)?;
    if !analyze {
        return Ok(());
    }
    let mut rows = Vec::new();
    for acq in &acquisitions {
        let (hist, m) = analyze_streams(cfg, acq.kind, &acq.label, &acq.output.idler, &acq.output.signal, exec)?;
        report.write(dir, &format!("histogram_{}.csv", acq.label), &hist.to_csv())?;
        rows.push(m);
    }
    report.write(dir, "metrics.csv", &metrics_csv(&rows))?;
    let input_stats = acquisitions
        .iter()
        .find(|a| a.kind == AcquisitionKind::Input)
        .map(|a| &a.output.stats);
    if let Some(row) = table_s3_row(cfg, &rows, input_stats) {
        report.write_table(dir, "tableS3.csv", TABLE_S3_HEADER, &[row])?;
    }
    if cfg.scenario.dichroism_scan {
        let (points, fit) = dichroism_scan(cfg, exec)?;
        let scan_rows: Vec<String> = points.iter().map(|p| format!("{},{}", p.theta_deg, p.counts)).collect();
        report.write_table(dir, "dichroism.csv", DICHROISM_HEADER, &scan_rows)?;
        let (g_e, s_e) = g2_pair(find(&rows, AcquisitionKind::Echo));
        let (g_i, s_i) = g2_pair(find(&rows, AcquisitionKind::Input));
        let predicted = g_e.zip(fit.as_ref()).map(|(g, f)| g2_input_prediction(g, f.ratio));
        let row = [
            cfg.source.pump_power_mw.to_string(),
            opt(g_e),
            opt(s_e),
            opt(fit.as_ref().map(|f| f.ratio)),
            opt(fit.as_ref().map(|f| f.visibility)),
            opt(predicted),
            opt(g_i),
            opt(s_i),
        ]
        .join(",");
        report.write_table(dir, "tableS4.csv", TABLE_S4_HEADER, &[row])?;
    }
    report.metrics = rows;
    Ok(())
}

fn label_for(path: &Path) -> (String, Option<AcquisitionKind>) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("timestamps");
    let label = stem.strip_prefix("timestamps_").unwrap_or(stem).to_string();
    let kind = label.parse::<AcquisitionKind>().ok();
    (label, kind)
}

fn run_analyze(cfg: &ExperimentConfig, opts: &RunOptions, report: &mut Report) -> Result<(), ScenarioError> {
    if opts.timestamps.is_empty() {
        return Err(ScenarioError::MissingInput("analyze mode needs at least one timestamp file".into()));
    }
    let dir = &opts.out_dir;
    let mut rows = Vec::new();
    let mut inputs: Vec<(String, AcquisitionKind, &PathBuf)> = Vec::new();
    for path in &opts.timestamps {
        let (label, kind) = label_for(path);
        match kind {
            Some(k) => inputs.push((label, k, path)),
            None => {
                inputs.push((format!("{label}_input"), AcquisitionKind::Input, path));
                if cfg.memory.mode == MemoryMode::Afc {
                    inputs.push((format!("{label}_echo"), AcquisitionKind::Echo, path));
                }
            }
        }
    }
    inputs.sort_by_key(|(_, k, _)| *k);
    for (label, kind, path) in inputs {
        let format = opts
            .timestamp_format
            .or_else(|| infer_format(path))
            .unwrap_or(cfg.run.format);
        let streams = ingest_timestamps(path, format)?;
        for w in &streams.warnings {
            log::warn!("{}: {w}", path.display());
            report.warnings.push(format!("{}: {w}", path.display()));
        }
        let (hist, m) = analyze_streams(cfg, kind, &label, &streams.idler, &streams.signal, opts.exec)?;
        report.write(dir, &format!("histogram_{label}.csv"), &hist.to_csv())?;
        rows.push(m);
    }
    report.write(dir, "metrics.csv", &metrics_csv(&rows))?;
    report.metrics = rows;
    Ok(())
}

/// Runs a validated scenario and writes its outputs under `opts.out_dir`.
pub fn run_scenario(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report, ScenarioError> {
    std::fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let mut report = Report::default();
    report.write(&opts.out_dir, "config.effective.cfg", &effective_config_text(cfg))?;
    match cfg.scenario.mode {
        RunMode::Simulate => run_simulation_modes(cfg, opts, &mut report, false)?,
        RunMode::SimulateAnalyze => run_simulation_modes(cfg, opts, &mut report, true)?,
        RunMode::Analyze => run_analyze(cfg, opts, &mut report)?,
        RunMode::Sweep => {
            run_sweeps(cfg, opts, &mut report)?;
            report.write(&opts.out_dir, "metrics.csv", &metrics_csv(&report.metrics.clone()))?;
        }
    }
    Ok(report)
}

fn effective_config_text(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# effective configuration after defaults and overrides");
    s.push_str(&cfg.to_config_text());
    s
}
