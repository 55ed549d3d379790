//! Scenario configuration: a flat `section.key = value` text format.
//!
//! Lines are `key = value`; `#` starts a comment. Dimensional values carry
//! a unit suffix (`ps ns us ms s`, `Hz kHz MHz GHz`, `mW`), fractions may
//! be written bare or with `pct`. Lists are comma separated; elements
//! without a unit borrow the unit of the last element. Unknown keys are an
//! error. See `configs/FORMAT.md` for the key reference.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::analysis::{HistogramSpec, WindowAveraging};
use crate::chain::{
    path_transmission, ArmChain, CavitySpec, ChainConfig, DichroismModel, LossTable, SpectralFilter,
    ETALON_ROW, FILTER_CAVITY_ROW,
};
use crate::detection::{DetectorSpec, IDLER_CHANNEL, SIGNAL_CHANNEL};
use crate::memory::{CombParams, DepthPolicy, EfficiencySource, MemoryConfig, MemoryMode, PeakShape, StorageModel};
use crate::model::{Arm, Origin, PhotonEvent, SpectralMode, MODES_PER_CLUSTER};
use crate::pipeline::SimulationSetup;
use crate::source::{CorrelationConvention, SourceParams};
use crate::time::{PeriodicGate, Time, PS_PER_MS, PS_PER_NS, PS_PER_S, PS_PER_US};
use crate::timestamps::Format;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Simulate,
    Analyze,
    SimulateAnalyze,
    Sweep,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Simulate => "simulate",
            RunMode::Analyze => "analyze",
            RunMode::SimulateAnalyze => "simulate+analyze",
            RunMode::Sweep => "sweep",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "simulate" => Ok(RunMode::Simulate),
            "analyze" => Ok(RunMode::Analyze),
            "simulate+analyze" => Ok(RunMode::SimulateAnalyze),
            "sweep" => Ok(RunMode::Sweep),
            _ => Err(format!("unknown mode `{s}` (simulate, analyze, simulate+analyze, sweep)")),
        }
    }
}

/// Which measurement a simulated acquisition stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AcquisitionKind {
    /// Photons sent through the empty transparency pit; window at zero delay.
    Input,
    /// Comb prepared; window at the storage time.
    Echo,
}

impl AcquisitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AcquisitionKind::Input => "input",
            AcquisitionKind::Echo => "echo",
        }
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "input" => Ok(AcquisitionKind::Input),
            "echo" => Ok(AcquisitionKind::Echo),
            _ => Err(format!("unknown acquisition `{s}` (input, echo)")),
        }
    }
}

/// Broadband noise level, either absolute or relative to the pair signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Counts per second per mW at the source.
    RatePerMw(f64),
    /// Background-to-signal ratio of signal-detector singles with the
    /// memory transparent.
    SignalRatio(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub duration: Time,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub cavity: bool,
    pub cavity_fsr_mhz: f64,
    pub cavity_linewidth_mhz: f64,
    pub etalon: bool,
    pub etalon_fsr_mhz: f64,
    pub etalon_linewidth_mhz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalConfig {
    pub od_d1: f64,
    pub od_d2: f64,
    pub polarization_deg: f64,
    pub line_half_width_mhz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dark_rate: f64,
    /// Follow the shutter of the arm (memory duty for the signal, source
    /// duty for the idler).
    pub gated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub bin: Time,
    pub window: Time,
    pub hist_min_ps: i64,
    pub hist_max_ps: i64,
    /// Distance from the coincidence window centre to the near edge of the
    /// noise window.
    pub noise_offset: Time,
    pub noise_width: Time,
    pub window_averaging: WindowAveraging,
    pub autocorrelation: bool,
    pub t_c: Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: RunMode,
    pub acquisitions: Vec<AcquisitionKind>,
    pub sweep_pump_mw: Vec<f64>,
    pub sweep_tau: Vec<Time>,
    pub compare_filter_cavity: bool,
    pub dichroism_scan: bool,
    pub dichroism_step_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub source: SourceParams,
    pub noise: NoiseLevel,
    pub filter: FilterConfig,
    pub signal_loss: LossTable,
    pub idler_loss: LossTable,
    pub memory_loss: LossTable,
    pub crystal: CrystalConfig,
    pub memory: MemoryConfig,
    pub tau_policy: DepthPolicy,
    pub signal_detector: DetectorConfig,
    pub idler_detector: DetectorConfig,
    pub analysis: AnalysisConfig,
    pub scenario: ScenarioConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let source = SourceParams {
            noise_rate_per_mw: 0.0,
            ..SourceParams::default()
        };
        let s = DetectorSpec::signal_default();
        let i = DetectorSpec::idler_default();
        ExperimentConfig {
            run: RunConfig {
                seed: 1,
                duration: Time::from_secs(60),
                format: Format::Binary,
            },
            noise: NoiseLevel::RatePerMw(source.noise_rate_per_mw),
            source,
            filter: FilterConfig {
                cavity: true,
                cavity_fsr_mhz: 16_800.0,
                cavity_linewidth_mhz: 80.0,
                etalon: true,
                etalon_fsr_mhz: 60_000.0,
                etalon_linewidth_mhz: 10_000.0,
            },
            signal_loss: LossTable::signal_default(),
            idler_loss: LossTable::idler_default(),
            memory_loss: LossTable::post_memory_default(),
            crystal: CrystalConfig {
                od_d1: 1.4,
                od_d2: 6.9,
                polarization_deg: 90.0,
                line_half_width_mhz: 2_500.0,
            },
            memory: MemoryConfig::default(),
            tau_policy: DepthPolicy::FixedPeakDepth,
            signal_detector: DetectorConfig {
                efficiency: s.efficiency,
                dark_rate: s.dark_rate,
                gated: true,
            },
            idler_detector: DetectorConfig {
                efficiency: i.efficiency,
                dark_rate: i.dark_rate,
                gated: true,
            },
            analysis: AnalysisConfig {
                bin: Time::from_ns(5),
                window: Time::from_ns(400),
                hist_min_ps: -5 * PS_PER_US as i64,
                hist_max_ps: 10 * PS_PER_US as i64,
                noise_offset: Time::from_ns(600),
                noise_width: Time::from_ns(800),
                window_averaging: WindowAveraging::Excess,
                autocorrelation: true,
                t_c: Time::from_ns(265),
            },
            scenario: ScenarioConfig {
                name: "scenario".into(),
                mode: RunMode::SimulateAnalyze,
                acquisitions: vec![AcquisitionKind::Input, AcquisitionKind::Echo],
                sweep_pump_mw: Vec::new(),
                sweep_tau: Vec::new(),
                compare_filter_cavity: false,
                dichroism_scan: false,
                dichroism_step_deg: 10.0,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Value parsing

fn split_unit(v: &str) -> (&str, &str) {
    let v = v.trim();
    let idx = v
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+'))
        .unwrap_or(v.len());
    (v[..idx].trim(), v[idx..].trim())
}

/// `number × scale` for a plain decimal, exactly, or an error if the
/// result is not an integer.
fn decimal_times(number: &str, scale: u64) -> Result<i64, String> {
    let (neg, digits) = match number.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, number.strip_prefix('+').unwrap_or(number)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty()
        || !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(format!("`{number}` is not a decimal number"));
    }
    let frac = frac_part.trim_end_matches('0');
    let mut mantissa: i128 = 0;
    for c in int_part.chars().chain(frac.chars()) {
        mantissa = mantissa * 10 + (c as u8 - b'0') as i128;
        if mantissa > i64::MAX as i128 * 1_000_000 {
            return Err(format!("`{number}` is out of range"));
        }
    }
    let denom = 10i128.pow(frac.len() as u32);
    let scaled = mantissa * scale as i128;
    if scaled % denom != 0 {
        return Err(format!("`{number}` is finer than one picosecond"));
    }
    let v = scaled / denom;
    if v > i64::MAX as i128 {
        return Err(format!("`{number}` is out of range"));
    }
    Ok(if neg { -(v as i64) } else { v as i64 })
}

fn time_scale(unit: &str) -> Option<u64> {
    Some(match unit {
        "ps" => 1,
        "ns" => PS_PER_NS,
        "us" | "µs" => PS_PER_US,
        "ms" => PS_PER_MS,
        "s" => PS_PER_S,
        _ => return None,
    })
}

fn parse_signed_time(v: &str) -> Result<i64, String> {
    let (num, unit) = split_unit(v);
    let scale = time_scale(unit).ok_or_else(|| format!("`{v}` needs a time unit (ps, ns, us, ms, s)"))?;
    decimal_times(num, scale)
}

fn parse_time(v: &str) -> Result<Time, String> {
    let ps = parse_signed_time(v)?;
    if ps < 0 {
        return Err(format!("`{v}` must not be negative"));
    }
    Ok(Time(ps as u64))
}

fn parse_number(v: &str) -> Result<f64, String> {
    let v = v.trim();
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("`{v}` is not a number"))
}

/// Frequency converted to `target` (one of Hz, kHz, MHz, GHz).
fn parse_frequency(v: &str, target: &str) -> Result<f64, String> {
    let hz = |u: &str| -> Option<f64> {
        Some(match u {
            "Hz" => 1.0,
            "kHz" => 1e3,
            "MHz" => 1e6,
            "GHz" => 1e9,
            _ => return None,
        })
    };
    let (num, unit) = split_unit(v);
    let from = hz(unit).ok_or_else(|| format!("`{v}` needs a frequency unit (Hz, kHz, MHz, GHz)"))?;
    let x = parse_number(num)?;
    if unit == target {
        Ok(x)
    } else {
        Ok(x * from / hz(target).expect("known target unit"))
    }
}

fn parse_power(v: &str) -> Result<f64, String> {
    let (num, unit) = split_unit(v);
    if unit != "mW" {
        return Err(format!("`{v}` needs the unit mW"));
    }
    parse_number(num)
}

fn parse_fraction(v: &str) -> Result<f64, String> {
    let (num, unit) = split_unit(v);
    match unit {
        "" => parse_number(num),
        "pct" | "%" => parse_number(&format!("{num}e-2")),
        _ => Err(format!("`{v}` is not a fraction (bare number or pct)")),
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

/// Splits a list, giving unit-less elements the unit of the last element.
fn list_items(v: &str) -> Vec<String> {
    let items: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let shared = items.last().map(|s| split_unit(s).1).unwrap_or("");
    items
        .iter()
        .map(|s| {
            if split_unit(s).1.is_empty() && !shared.is_empty() {
                format!("{s} {shared}")
            } else {
                s.to_string()
            }
        })
        .collect()
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    list_items(v).iter().map(|s| f(s)).collect()
}

// ---------------------------------------------------------------------------
// Value formatting

fn fmt_time(t: Time) -> String {
    fmt_signed_time(t.ps() as i64)
}

fn fmt_signed_time(ps: i64) -> String {
    for (unit, scale) in [("s", PS_PER_S), ("ms", PS_PER_MS), ("us", PS_PER_US), ("ns", PS_PER_NS)] {
        if ps != 0 && ps % scale as i64 == 0 {
            return format!("{} {unit}", ps / scale as i64);
        }
    }
    format!("{ps} ps")
}

fn fmt_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(", ")
}

fn shape_name(s: PeakShape) -> &'static str {
    match s {
        PeakShape::Gaussian => "gaussian",
        PeakShape::Square => "square",
    }
}

fn mode_name(m: MemoryMode) -> &'static str {
    match m {
        MemoryMode::Afc => "afc",
        MemoryMode::Transparency => "transparency",
        MemoryMode::Absorbing => "absorbing",
    }
}

// ---------------------------------------------------------------------------

#[derive(Default)]
struct Explicit {
    storage_time: bool,
    delta: bool,
}

impl ExperimentConfig {
    fn set(&mut self, key: &str, v: &str, explicit: &mut Explicit) -> Result<bool, String> {
        if let Some((section, row)) = key.split_once('.') {
            let table = match section {
                "signal_loss" => Some(&mut self.signal_loss),
                "idler_loss" => Some(&mut self.idler_loss),
                "memory_loss" => Some(&mut self.memory_loss),
                _ => None,
            };
            if let Some(table) = table {
                if row.is_empty() || !row.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(format!("invalid loss element name `{row}`"));
                }
                let t = parse_fraction(v)?;
                match table.elements.iter_mut().find(|(n, _)| n == row) {
                    Some(slot) => slot.1 = t,
                    None => table.elements.push((row.to_string(), t)),
                }
                return Ok(true);
            }
        }
        match key {
            "run.seed" => self.run.seed = v.trim().parse().map_err(|_| format!("`{v}` is not a seed"))?,
            "run.duration" => self.run.duration = parse_time(v)?,
            "run.format" => self.run.format = v.trim().parse()?,

            "source.pump" => self.source.pump_power_mw = parse_power(v)?,
            "source.pair_rate_per_mw" => self.source.pair_rate_per_mw = parse_number(v)?,
            "source.correlation_time" => self.source.correlation_time = parse_time(v)?,
            "source.correlation_convention" => {
                self.source.convention = match v.trim() {
                    "one_over_e" => CorrelationConvention::OneOverE,
                    "fwhm" => CorrelationConvention::Fwhm,
                    o => return Err(format!("unknown convention `{o}` (one_over_e, fwhm)")),
                }
            }
            "source.resonant_mode" => {
                self.source.resonant_mode_index = v.trim().parse().map_err(|_| format!("`{v}` is not a mode index"))?
            }
            "source.noise_rate_per_mw" => self.noise = NoiseLevel::RatePerMw(parse_number(v)?),
            "source.noise_ratio" => self.noise = NoiseLevel::SignalRatio(parse_number(v)?),
            "source.duty_period" => self.source.duty.period = parse_time(v)?,
            "source.duty" => self.source.duty.on_fraction = parse_fraction(v)?,
            "source.gating" => self.source.gating = parse_bool(v)?,
            "source.gate_lead" => self.source.gate_lead = parse_time(v)?,
            "source.gate_hold" => self.source.gate_hold = parse_time(v)?,

            "filter.cavity" => self.filter.cavity = parse_bool(v)?,
            "filter.cavity_fsr" => self.filter.cavity_fsr_mhz = parse_frequency(v, "MHz")?,
            "filter.cavity_linewidth" => self.filter.cavity_linewidth_mhz = parse_frequency(v, "MHz")?,
            "filter.etalon" => self.filter.etalon = parse_bool(v)?,
            "filter.etalon_fsr" => self.filter.etalon_fsr_mhz = parse_frequency(v, "MHz")?,
            "filter.etalon_linewidth" => self.filter.etalon_linewidth_mhz = parse_frequency(v, "MHz")?,

            "crystal.od_d1" => self.crystal.od_d1 = parse_number(v)?,
            "crystal.od_d2" => self.crystal.od_d2 = parse_number(v)?,
            "crystal.polarization_deg" => self.crystal.polarization_deg = parse_number(v)?,
            "crystal.line_half_width" => self.crystal.line_half_width_mhz = parse_frequency(v, "MHz")?,

            "memory.mode" => {
                self.memory.mode = match v.trim() {
                    "afc" => MemoryMode::Afc,
                    "transparency" => MemoryMode::Transparency,
                    "absorbing" => MemoryMode::Absorbing,
                    o => return Err(format!("unknown memory mode `{o}` (afc, transparency, absorbing)")),
                }
            }
            "memory.storage_time" => {
                self.memory.storage_time = parse_time(v)?;
                explicit.storage_time = true;
            }
            "memory.efficiency" => self.memory.efficiency = parse_fraction(v)?,
            "memory.efficiency_source" => {
                self.memory.efficiency_source = match v.trim() {
                    "configured" => EfficiencySource::Configured,
                    "analytic" => EfficiencySource::Analytic,
                    o => return Err(format!("unknown efficiency source `{o}` (configured, analytic)")),
                }
            }
            "memory.pit_transmission" => self.memory.pit_transmission = parse_fraction(v)?,
            "memory.duty_period" => self.memory.duty.period = parse_time(v)?,
            "memory.duty" => self.memory.duty.on_fraction = parse_fraction(v)?,

            "comb.gamma" => self.memory.comb.gamma_khz = parse_frequency(v, "kHz")?,
            "comb.delta" => {
                self.memory.comb.delta_khz = parse_frequency(v, "kHz")?;
                explicit.delta = true;
            }
            "comb.d" => self.memory.comb.d = parse_number(v)?,
            "comb.d0" => self.memory.comb.d0 = parse_number(v)?,
            "comb.total_width" => self.memory.comb.total_width_khz = parse_frequency(v, "kHz")?,
            "comb.shape" => {
                self.memory.comb.shape = match v.trim() {
                    "gaussian" => PeakShape::Gaussian,
                    "square" => PeakShape::Square,
                    o => return Err(format!("unknown peak shape `{o}` (gaussian, square)")),
                }
            }
            "comb.full_od" => self.memory.comb.full_od = parse_number(v)?,
            "comb.tau_policy" => {
                self.tau_policy = match v.trim() {
                    "fixed_peak_depth" => DepthPolicy::FixedPeakDepth,
                    "fixed_effective_depth" => DepthPolicy::FixedEffectiveDepth,
                    o => return Err(format!("unknown policy `{o}` (fixed_peak_depth, fixed_effective_depth)")),
                }
            }

            "detector.signal.efficiency" => self.signal_detector.efficiency = parse_fraction(v)?,
            "detector.signal.dark_rate" => self.signal_detector.dark_rate = parse_frequency(v, "Hz")?,
            "detector.signal.gated" => self.signal_detector.gated = parse_bool(v)?,
            "detector.idler.efficiency" => self.idler_detector.efficiency = parse_fraction(v)?,
            "detector.idler.dark_rate" => self.idler_detector.dark_rate = parse_frequency(v, "Hz")?,
            "detector.idler.gated" => self.idler_detector.gated = parse_bool(v)?,

            "analysis.bin" => self.analysis.bin = parse_time(v)?,
            "analysis.window" => self.analysis.window = parse_time(v)?,
            "analysis.hist_min" => self.analysis.hist_min_ps = parse_signed_time(v)?,
            "analysis.hist_max" => self.analysis.hist_max_ps = parse_signed_time(v)?,
            "analysis.noise_offset" => self.analysis.noise_offset = parse_time(v)?,
            "analysis.noise_width" => self.analysis.noise_width = parse_time(v)?,
            "analysis.window_averaging" => {
                self.analysis.window_averaging = match v.trim() {
                    "excess" => WindowAveraging::Excess,
                    "total" => WindowAveraging::Total,
                    o => return Err(format!("unknown form `{o}` (excess, total)")),
                }
            }
            "analysis.autocorrelation" => self.analysis.autocorrelation = parse_bool(v)?,
            "analysis.t_c" => self.analysis.t_c = parse_time(v)?,

            "scenario.name" => self.scenario.name = v.trim().to_string(),
            "scenario.mode" => self.scenario.mode = v.trim().parse()?,
            "scenario.acquisitions" => {
                self.scenario.acquisitions = parse_list(v, |s| s.parse::<AcquisitionKind>())?
            }
            "scenario.sweep_pump" => self.scenario.sweep_pump_mw = parse_list(v, parse_power)?,
            "scenario.sweep_tau" => self.scenario.sweep_tau = parse_list(v, parse_time)?,
            "scenario.compare_filter_cavity" => self.scenario.compare_filter_cavity = parse_bool(v)?,
            "scenario.dichroism_scan" => self.scenario.dichroism_scan = parse_bool(v)?,
            "scenario.dichroism_step_deg" => self.scenario.dichroism_step_deg = parse_number(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies one `key = value` assignment outside of a file, e.g. from a
    /// command-line flag. Storage time and comb spacing stay linked.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut explicit = Explicit::default();
        match self.set(key, value, &mut explicit) {
            Ok(true) => {}
            Ok(false) => return Err(ConfigError::UnknownKey { line: 0, key: key.into() }),
            Err(message) => return Err(ConfigError::Syntax { line: 0, message: format!("{key}: {message}") }),
        }
        if explicit.storage_time && !explicit.delta {
            self.set_storage_time(self.memory.storage_time);
        } else if explicit.delta && !explicit.storage_time {
            self.memory.storage_time = self.memory.comb.storage_time();
        }
        Ok(())
    }

    /// Moves the echo to `tau`, rebuilding the comb for that spacing.
    pub fn set_storage_time(&mut self, tau: Time) {
        if tau > Time::ZERO {
            self.memory.comb = self.memory.comb.at_storage_time(tau, self.tau_policy);
        }
        self.memory.storage_time = tau;
    }

    pub fn without_filter_cavity(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.filter.cavity = false;
        c
    }

    pub fn chain(&self) -> ChainConfig {
        let mut signal_losses = self.signal_loss.clone();
        let mut signal_filters = Vec::new();
        if self.filter.etalon {
            signal_filters.push(SpectralFilter {
                row: ETALON_ROW.into(),
                spec: CavitySpec {
                    fsr_mhz: self.filter.etalon_fsr_mhz,
                    linewidth_fwhm_mhz: self.filter.etalon_linewidth_mhz,
                    peak_transmission: signal_losses.get(ETALON_ROW).unwrap_or(1.0),
                },
            });
        } else {
            signal_losses = signal_losses.without(ETALON_ROW);
        }
        let mut idler_losses = self.idler_loss.clone();
        let mut idler_filters = Vec::new();
        if self.filter.cavity {
            idler_filters.push(SpectralFilter {
                row: FILTER_CAVITY_ROW.into(),
                spec: CavitySpec {
                    fsr_mhz: self.filter.cavity_fsr_mhz,
                    linewidth_fwhm_mhz: self.filter.cavity_linewidth_mhz,
                    peak_transmission: idler_losses.get(FILTER_CAVITY_ROW).unwrap_or(1.0),
                },
            });
        } else {
            idler_losses = idler_losses.without(FILTER_CAVITY_ROW);
        }
        ChainConfig {
            signal: ArmChain {
                losses: signal_losses,
                filters: signal_filters,
            },
            post_memory: self.memory_loss.clone(),
            idler: ArmChain {
                losses: idler_losses,
                filters: idler_filters,
            },
            dichroism: DichroismModel {
                od_d1: self.crystal.od_d1,
                od_d2: self.crystal.od_d2,
            },
            polarization_deg: self.crystal.polarization_deg,
            inhomogeneous_half_width_mhz: self.crystal.line_half_width_mhz,
        }
    }

    /// Mean detection-plane survival of a pair's signal photon with the
    /// memory transparent, and the same for broadband noise.
    fn transparent_signal_survival(&self) -> (f64, f64) {
        let chain = self.chain();
        let transparent = MemoryConfig {
            mode: MemoryMode::Transparency,
            ..self.memory.clone()
        };
        let model = StorageModel::new(&transparent, &chain);
        let post = path_transmission(&chain.post_memory);
        let through = |mode: Option<SpectralMode>, origin: Origin| {
            let ev = PhotonEvent {
                arm: Arm::Signal,
                time: Time::ZERO,
                mode,
                origin,
            };
            let (_, transmit) = model.probabilities(&ev, &chain);
            chain.signal.survival(mode.as_ref()) * transmit * post
        };
        let modes = SpectralMode::all(self.source.resonant_mode_index);
        let pair = modes.iter().map(|m| through(Some(*m), Origin::Pair(0))).sum::<f64>() / modes.len() as f64;
        (pair, through(None, Origin::BroadbandNoise))
    }

    /// Broadband noise rate per mW implied by [`NoiseLevel`].
    pub fn noise_rate_per_mw(&self) -> f64 {
        match self.noise {
            NoiseLevel::RatePerMw(r) => r,
            NoiseLevel::SignalRatio(ratio) => {
                let (pair, noise) = self.transparent_signal_survival();
                if noise <= 0.0 {
                    0.0
                } else {
                    ratio * self.source.pair_rate_per_mw * pair / noise
                }
            }
        }
    }

    pub fn signal_detector_spec(&self) -> DetectorSpec {
        DetectorSpec {
            channel: SIGNAL_CHANNEL,
            efficiency: self.signal_detector.efficiency,
            dark_rate: self.signal_detector.dark_rate,
            gate: if self.signal_detector.gated {
                self.memory.duty
            } else {
                PeriodicGate::always_on()
            },
        }
    }

    pub fn idler_detector_spec(&self) -> DetectorSpec {
        DetectorSpec {
            channel: IDLER_CHANNEL,
            efficiency: self.idler_detector.efficiency,
            dark_rate: self.idler_detector.dark_rate,
            gate: if self.idler_detector.gated {
                self.source.duty
            } else {
                PeriodicGate::always_on()
            },
        }
    }

    /// Simulation inputs for one acquisition.
    pub fn setup(&self, kind: AcquisitionKind, seed: u64) -> SimulationSetup {
        let mut memory = self.memory.clone();
        if kind == AcquisitionKind::Input && memory.mode == MemoryMode::Afc {
            memory.mode = MemoryMode::Transparency;
        }
        SimulationSetup {
            source: SourceParams {
                noise_rate_per_mw: self.noise_rate_per_mw(),
                ..self.source.clone()
            },
            chain: self.chain(),
            memory,
            signal_detector: self.signal_detector_spec(),
            idler_detector: self.idler_detector_spec(),
            duration: self.run.duration,
            seed,
        }
    }

    pub fn histogram_spec(&self) -> Result<HistogramSpec, ConfigError> {
        HistogramSpec::new(self.analysis.bin, self.analysis.hist_min_ps, self.analysis.hist_max_ps)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_config_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("run.seed", self.run.seed.to_string());
        kv("run.duration", fmt_time(self.run.duration));
        kv(
            "run.format",
            match self.run.format {
                Format::Csv => "csv",
                Format::Binary => "binary",
            }
            .into(),
        );

        let s = &self.source;
        kv("source.pump", format!("{} mW", s.pump_power_mw));
        kv("source.pair_rate_per_mw", s.pair_rate_per_mw.to_string());
        kv("source.correlation_time", fmt_time(s.correlation_time));
        kv(
            "source.correlation_convention",
            match s.convention {
                CorrelationConvention::OneOverE => "one_over_e",
                CorrelationConvention::Fwhm => "fwhm",
            }
            .into(),
        );
        kv("source.resonant_mode", s.resonant_mode_index.to_string());
        match self.noise {
            NoiseLevel::RatePerMw(r) => kv("source.noise_rate_per_mw", r.to_string()),
            NoiseLevel::SignalRatio(r) => kv("source.noise_ratio", r.to_string()),
        }
        kv("source.duty_period", fmt_time(s.duty.period));
        kv("source.duty", s.duty.on_fraction.to_string());
        kv("source.gating", s.gating.to_string());
        kv("source.gate_lead", fmt_time(s.gate_lead));
        kv("source.gate_hold", fmt_time(s.gate_hold));

        let f = &self.filter;
        kv("filter.cavity", f.cavity.to_string());
        kv("filter.cavity_fsr", format!("{} MHz", f.cavity_fsr_mhz));
        kv("filter.cavity_linewidth", format!("{} MHz", f.cavity_linewidth_mhz));
        kv("filter.etalon", f.etalon.to_string());
        kv("filter.etalon_fsr", format!("{} MHz", f.etalon_fsr_mhz));
        kv("filter.etalon_linewidth", format!("{} MHz", f.etalon_linewidth_mhz));

        for (section, table) in [
            ("signal_loss", &self.signal_loss),
            ("idler_loss", &self.idler_loss),
            ("memory_loss", &self.memory_loss),
        ] {
            for (name, t) in &table.elements {
                kv(&format!("{section}.{name}"), t.to_string());
            }
        }

        let c = &self.crystal;
        kv("crystal.od_d1", c.od_d1.to_string());
        kv("crystal.od_d2", c.od_d2.to_string());
        kv("crystal.polarization_deg", c.polarization_deg.to_string());
        kv("crystal.line_half_width", format!("{} MHz", c.line_half_width_mhz));

        let m = &self.memory;
        kv("memory.mode", mode_name(m.mode).into());
        kv("memory.storage_time", fmt_time(m.storage_time));
        kv("memory.efficiency", m.efficiency.to_string());
        kv(
            "memory.efficiency_source",
            match m.efficiency_source {
                EfficiencySource::Configured => "configured",
                EfficiencySource::Analytic => "analytic",
            }
            .into(),
        );
        kv("memory.pit_transmission", m.pit_transmission.to_string());
        kv("memory.duty_period", fmt_time(m.duty.period));
        kv("memory.duty", m.duty.on_fraction.to_string());

        let cb = &m.comb;
        kv("comb.gamma", format!("{} kHz", cb.gamma_khz));
        kv("comb.delta", format!("{} kHz", cb.delta_khz));
        kv("comb.d", cb.d.to_string());
        kv("comb.d0", cb.d0.to_string());
        kv("comb.total_width", format!("{} kHz", cb.total_width_khz));
        kv("comb.shape", shape_name(cb.shape).into());
        kv("comb.full_od", cb.full_od.to_string());
        kv(
            "comb.tau_policy",
            match self.tau_policy {
                DepthPolicy::FixedPeakDepth => "fixed_peak_depth",
                DepthPolicy::FixedEffectiveDepth => "fixed_effective_depth",
            }
            .into(),
        );

        for (name, d) in [("signal", &self.signal_detector), ("idler", &self.idler_detector)] {
            kv(&format!("detector.{name}.efficiency"), d.efficiency.to_string());
            kv(&format!("detector.{name}.dark_rate"), format!("{} Hz", d.dark_rate));
            kv(&format!("detector.{name}.gated"), d.gated.to_string());
        }

        let a = &self.analysis;
        kv("analysis.bin", fmt_time(a.bin));
        kv("analysis.window", fmt_time(a.window));
        kv("analysis.hist_min", fmt_signed_time(a.hist_min_ps));
        kv("analysis.hist_max", fmt_signed_time(a.hist_max_ps));
        kv("analysis.noise_offset", fmt_time(a.noise_offset));
        kv("analysis.noise_width", fmt_time(a.noise_width));
        kv(
            "analysis.window_averaging",
            match a.window_averaging {
                WindowAveraging::Excess => "excess",
                WindowAveraging::Total => "total",
            }
            .into(),
        );
        kv("analysis.autocorrelation", a.autocorrelation.to_string());
        kv("analysis.t_c", fmt_time(a.t_c));

        let sc = &self.scenario;
        kv("scenario.name", sc.name.clone());
        kv("scenario.mode", sc.mode.as_str().into());
        kv("scenario.acquisitions", fmt_list(&sc.acquisitions, |k| k.as_str().into()));
        if !sc.sweep_pump_mw.is_empty() {
            kv("scenario.sweep_pump", fmt_list(&sc.sweep_pump_mw, |p| format!("{p} mW")));
        }
        if !sc.sweep_tau.is_empty() {
            kv("scenario.sweep_tau", fmt_list(&sc.sweep_tau, |t| fmt_time(*t)));
        }
        kv("scenario.compare_filter_cavity", sc.compare_filter_cavity.to_string());
        kv("scenario.dichroism_scan", sc.dichroism_scan.to_string());
        kv("scenario.dichroism_step_deg", sc.dichroism_step_deg.to_string());
        o
    }
}

/// Parses config text on top of the defaults. Does not validate.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut explicit = Explicit::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        match cfg.set(key, value.trim(), &mut explicit) {
            Ok(true) => {}
            Ok(false) => return Err(ConfigError::UnknownKey { line, key: key.into() }),
            Err(message) => return Err(ConfigError::Syntax { line, message: format!("{key}: {message}") }),
        }
    }
    if explicit.storage_time && !explicit.delta && cfg.memory.storage_time > Time::ZERO {
        cfg.memory.comb.delta_khz = CombParams::spacing_for(cfg.memory.storage_time);
    } else if explicit.delta && !explicit.storage_time && cfg.memory.comb.delta_khz > 0.0 {
        cfg.memory.storage_time = cfg.memory.comb.storage_time();
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

fn check_probability(name: &str, p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} = {p} is not a probability in [0, 1]")))
    }
}

fn check_duty(name: &str, g: &PeriodicGate) -> Result<(), ConfigError> {
    if !(g.on_fraction > 0.0 && g.on_fraction <= 1.0) {
        return Err(ConfigError::Invalid(format!("{name} = {} must lie in (0, 1]", g.on_fraction)));
    }
    if g.period == Time::ZERO {
        return Err(ConfigError::Invalid(format!("{name}_period must be positive")));
    }
    Ok(())
}

/// Noise windows beside the coincidence window of an acquisition.
pub fn noise_windows(cfg: &ExperimentConfig, kind: AcquisitionKind) -> Vec<crate::analysis::DelayWindow> {
    let a = &cfg.analysis;
    let offset = a.noise_offset.ps() as i64;
    let width = a.noise_width.ps() as i64;
    match kind {
        AcquisitionKind::Input => {
            let end = -offset;
            vec![crate::analysis::DelayWindow::new(end - width, end)]
        }
        AcquisitionKind::Echo => {
            let start = cfg.memory.storage_time.ps() as i64 + offset;
            vec![crate::analysis::DelayWindow::new(start, start + width)]
        }
    }
}

/// Coincidence window of an acquisition.
pub fn signal_window(cfg: &ExperimentConfig, kind: AcquisitionKind) -> crate::analysis::DelayWindow {
    let center = match kind {
        AcquisitionKind::Input => 0,
        AcquisitionKind::Echo => cfg.memory.storage_time.ps() as i64,
    };
    crate::analysis::DelayWindow::centered(center, cfg.analysis.window)
}

/// Checks ranges and cross-field conditions and returns the normalized
/// configuration.
pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    let bad = |m: String| Err(ConfigError::Invalid(m));
    if cfg.run.duration == Time::ZERO {
        return bad("run.duration must be positive".into());
    }
    let s = &cfg.source;
    if !(s.pump_power_mw >= 0.0) || !(s.pair_rate_per_mw >= 0.0) {
        return bad("source.pump and source.pair_rate_per_mw must be non-negative".into());
    }
    match cfg.noise {
        NoiseLevel::RatePerMw(r) | NoiseLevel::SignalRatio(r) if !(r >= 0.0) => {
            return bad(format!("noise level {r} must be non-negative"));
        }
        _ => {}
    }
    if s.correlation_time == Time::ZERO {
        return bad("source.correlation_time must be positive".into());
    }
    if s.resonant_mode_index >= MODES_PER_CLUSTER {
        return bad(format!("source.resonant_mode must be below {MODES_PER_CLUSTER}"));
    }
    check_duty("source.duty", &s.duty)?;
    check_duty("memory.duty", &cfg.memory.duty)?;

    for (section, table) in [
        ("signal_loss", &cfg.signal_loss),
        ("idler_loss", &cfg.idler_loss),
        ("memory_loss", &cfg.memory_loss),
    ] {
        for (name, t) in &table.elements {
            if !(*t > 0.0 && *t <= 1.0) {
                return bad(format!("{section}.{name} = {t} must lie in (0, 1]"));
            }
        }
    }
    let f = &cfg.filter;
    for (name, fsr, lw) in [
        ("cavity", f.cavity_fsr_mhz, f.cavity_linewidth_mhz),
        ("etalon", f.etalon_fsr_mhz, f.etalon_linewidth_mhz),
    ] {
        if !(lw > 0.0 && fsr > lw) {
            return bad(format!("filter.{name}: linewidth must be positive and below the FSR"));
        }
    }
    let c = &cfg.crystal;
    if !(c.od_d1 >= 0.0 && c.od_d2 >= c.od_d1) {
        return bad("crystal optical depths must satisfy 0 <= od_d1 <= od_d2".into());
    }
    if !(0.0..=90.0).contains(&c.polarization_deg) {
        return bad("crystal.polarization_deg must lie in [0, 90]".into());
    }

    let m = &cfg.memory;
    check_probability("memory.efficiency", m.efficiency)?;
    check_probability("memory.pit_transmission", m.pit_transmission)?;
    let comb = &m.comb;
    if !(comb.delta_khz > 0.0) {
        return bad("comb.delta must be positive (the echo delay is its inverse)".into());
    }
    if m.mode == MemoryMode::Afc {
        if m.storage_time == Time::ZERO {
            return bad("memory.storage_time must be positive in afc mode".into());
        }
        comb.validate().map_err(|e| ConfigError::Invalid(format!("comb: {e}")))?;
        let model = StorageModel::new(m, &cfg.chain());
        let (echo, transmit) = model.resonant;
        if echo + transmit > 1.0 + 1e-12 {
            return bad(format!(
                "echo ({echo:.4}) and transmission ({transmit:.4}) probabilities exceed one"
            ));
        }
        check_probability("echo efficiency", m.echo_efficiency())?;
    }

    for (name, d) in [("signal", &cfg.signal_detector), ("idler", &cfg.idler_detector)] {
        check_probability(&format!("detector.{name}.efficiency"), d.efficiency)?;
        if !(d.dark_rate >= 0.0) {
            return bad(format!("detector.{name}.dark_rate must be non-negative"));
        }
    }

    // Slices are independent only if a herald's pump-off interval and its
    // echoes end inside the lock period that follows.
    if !s.duty.is_always_on() {
        let lock = s.duty.off_len();
        let taus: Vec<Time> = std::iter::once(m.storage_time).chain(cfg.scenario.sweep_tau.iter().copied()).collect();
        for tau in taus {
            let reach = tau.saturating_sub(s.gate_lead) + s.gate_hold;
            let need = if s.gating { reach.max(tau) } else { tau };
            if lock < need {
                return bad(format!(
                    "source lock period {} is shorter than the {} a herald can reach; slices would overlap",
                    fmt_time(lock),
                    fmt_time(need)
                ));
            }
        }
    }

    let a = &cfg.analysis;
    if a.window == Time::ZERO || a.bin == Time::ZERO || a.noise_width == Time::ZERO {
        return bad("analysis.bin, analysis.window and analysis.noise_width must be positive".into());
    }
    cfg.histogram_spec()?;
    let kinds = [AcquisitionKind::Input, AcquisitionKind::Echo];
    let taus: Vec<Time> = std::iter::once(m.storage_time).chain(cfg.scenario.sweep_tau.iter().copied()).collect();
    for tau in taus {
        let mut probe = cfg.clone();
        probe.memory.storage_time = tau;
        for kind in kinds {
            if kind == AcquisitionKind::Echo && m.mode != MemoryMode::Afc {
                continue;
            }
            for w in std::iter::once(signal_window(&probe, kind)).chain(noise_windows(&probe, kind)) {
                if w.start_ps < a.hist_min_ps || w.end_ps > a.hist_max_ps {
                    return bad(format!(
                        "{} window [{}, {}) at storage time {} falls outside the histogram range",
                        kind.as_str(),
                        fmt_signed_time(w.start_ps),
                        fmt_signed_time(w.end_ps),
                        fmt_time(tau)
                    ));
                }
            }
            // With herald gating the echo floor is flat only until 2τ − lead.
            if kind == AcquisitionKind::Echo && s.gating {
                let flat_end = 2 * tau.ps() as i64 - s.gate_lead.ps() as i64;
                if noise_windows(&probe, kind).iter().any(|w| w.end_ps > flat_end) {
                    return bad(format!(
                        "echo noise window at storage time {} extends past the gated floor ending at {}",
                        fmt_time(tau),
                        fmt_signed_time(flat_end)
                    ));
                }
            }
        }
    }

    let sc = &cfg.scenario;
    if sc.mode == RunMode::Sweep && sc.sweep_pump_mw.is_empty() && sc.sweep_tau.is_empty() {
        return bad("sweep mode needs scenario.sweep_pump or scenario.sweep_tau".into());
    }
    if sc.sweep_pump_mw.iter().any(|p| !(*p >= 0.0)) || sc.sweep_tau.iter().any(|t| *t == Time::ZERO) {
        return bad("sweep values must be positive".into());
    }
    if sc.acquisitions.is_empty() {
        return bad("scenario.acquisitions must not be empty".into());
    }
    if sc.dichroism_scan && !(sc.dichroism_step_deg > 0.0 && sc.dichroism_step_deg <= 90.0) {
        return bad("scenario.dichroism_step_deg must lie in (0, 90]".into());
    }
    Ok(cfg)
}
