//! Atomic frequency comb memory: comb description, closed-form and numerical
//! echo efficiency, and the per-photon storage transformation.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use thiserror::Error;

use crate::chain::ChainConfig;
use crate::model::{Arm, PhotonEvent};
use crate::time::{PeriodicGate, Time, PS_PER_S};

/// Minimum profile samples per peak FWHM.
pub const MIN_SAMPLES_PER_PEAK: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("comb sampling of {0} points per peak width is below the minimum of {MIN_SAMPLES_PER_PEAK}")]
    ResolutionTooCoarse(usize),
    #[error("invalid comb: {0}")]
    InvalidComb(String),
    #[error("comb profile has no absorbing peaks to normalize")]
    NotNormalizable,
    #[error("storage time must be positive")]
    NonPositiveStorageTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakShape {
    Gaussian,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombParams {
    /// Peak FWHM γ, kHz.
    pub gamma_khz: f64,
    /// Peak spacing Δ, kHz.
    pub delta_khz: f64,
    /// Peak optical depth d.
    pub d: f64,
    /// Absorbing background d₀.
    pub d0: f64,
    pub total_width_khz: f64,
    pub shape: PeakShape,
    /// Optical depth of the untailored line at the photon polarization.
    pub full_od: f64,
}

impl Default for CombParams {
    fn default() -> Self {
        CombParams {
            gamma_khz: 76.0,
            delta_khz: 500.0,
            d: 4.9,
            d0: 0.56,
            total_width_khz: 3_500.0,
            shape: PeakShape::Gaussian,
            full_od: 6.9,
        }
    }
}

/// How the peak optical depth follows the spacing when the storage time is
/// re-programmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthPolicy {
    /// Keep the peak optical depth d.
    FixedPeakDepth,
    /// Keep the effective depth d/F, i.e. the mean absorption of the comb.
    FixedEffectiveDepth,
}

impl CombParams {
    pub fn finesse(&self) -> f64 {
        self.delta_khz / self.gamma_khz
    }

    /// d̃ = d/F.
    pub fn effective_depth(&self) -> f64 {
        self.d / self.finesse()
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        let bad = |m: &str| Err(MemoryError::InvalidComb(m.into()));
        if !(self.delta_khz > 0.0) {
            return bad("peak spacing must be positive");
        }
        if !(self.gamma_khz > 0.0 && self.gamma_khz < self.delta_khz) {
            return bad("peak width must satisfy 0 < γ < Δ");
        }
        if !(self.d >= 0.0 && self.d0 >= 0.0 && self.full_od >= 0.0) {
            return bad("optical depths must be non-negative");
        }
        if !(self.total_width_khz >= self.delta_khz) {
            return bad("total width must hold at least one period");
        }
        Ok(())
    }

    /// Echo delay 1/Δ on the picosecond grid.
    pub fn storage_time(&self) -> Time {
        Time::from_ps_f64(1e9 / self.delta_khz)
    }

    pub fn spacing_for(storage_time: Time) -> f64 {
        1e9 / storage_time.ps() as f64
    }

    /// The same comb re-programmed for another storage time at fixed peak
    /// width.
    pub fn at_storage_time(&self, storage_time: Time, policy: DepthPolicy) -> CombParams {
        let delta_khz = Self::spacing_for(storage_time);
        let d = match policy {
            DepthPolicy::FixedPeakDepth => self.d,
            DepthPolicy::FixedEffectiveDepth => self.effective_depth() * delta_khz / self.gamma_khz,
        };
        CombParams {
            delta_khz,
            d,
            ..*self
        }
    }
}

/// `d̃² e^{-7/F²} e^{-d̃} e^{-d₀}`.
pub fn afc_efficiency_analytic(comb: &CombParams) -> f64 {
    let f = comb.finesse();
    let dt = comb.effective_depth();
    dt * dt * (-7.0 / (f * f)).exp() * (-dt).exp() * (-comb.d0).exp()
}

/// Sampled absorption spectrum of a comb on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CombProfile {
    pub comb: CombParams,
    pub step_khz: f64,
    pub detuning_khz: Vec<f64>,
    pub optical_depth: Vec<f64>,
}

impl CombProfile {
    pub fn periods(&self) -> usize {
        (self.comb.total_width_khz / self.comb.delta_khz + 1e-9).floor() as usize
    }

    /// Two-column CSV: `detuning_kHz,optical_depth`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("detuning_kHz,optical_depth\n");
        for (x, y) in self.detuning_khz.iter().zip(&self.optical_depth) {
            s.push_str(&format!("{x},{y}\n"));
        }
        s
    }
}

/// Periodic train of peaks of depth d and FWHM γ over the comb width, on
/// the background d₀. Samples sit at cell midpoints with an integer number
/// of cells per period.
pub fn comb_profile(comb: &CombParams, samples_per_gamma: usize) -> Result<CombProfile, MemoryError> {
    comb.validate()?;
    if samples_per_gamma < MIN_SAMPLES_PER_PEAK {
        return Err(MemoryError::ResolutionTooCoarse(samples_per_gamma));
    }
    let periods = (comb.total_width_khz / comb.delta_khz + 1e-9).floor() as usize;
    let per_period = (comb.finesse() * samples_per_gamma as f64).ceil() as usize;
    let step = comb.delta_khz / per_period as f64;
    let width = periods as f64 * comb.delta_khz;
    let centers: Vec<f64> = (0..periods)
        .map(|k| -width / 2.0 + (k as f64 + 0.5) * comb.delta_khz)
        .collect();
    let n = periods * per_period;
    let mut detuning_khz = Vec::with_capacity(n);
    let mut optical_depth = Vec::with_capacity(n);
    let g2 = 4.0 * LN_2 / (comb.gamma_khz * comb.gamma_khz);
    for j in 0..n {
        let x = -width / 2.0 + (j as f64 + 0.5) * step;
        let peaks: f64 = match comb.shape {
            PeakShape::Gaussian => centers
                .iter()
                .map(|c| comb.d * (-(x - c) * (x - c) * g2).exp())
                .sum(),
            PeakShape::Square => centers
                .iter()
                .filter(|c| (x - **c).abs() < comb.gamma_khz / 2.0)
                .count() as f64
                * comb.d,
        };
        detuning_khz.push(x);
        optical_depth.push(comb.d0 + peaks);
    }
    Ok(CombProfile {
        comb: *comb,
        step_khz: step,
        detuning_khz,
        optical_depth,
    })
}

/// Rephasing amplitude `|∫ n(δ) e^{-i2πδτ} dδ|` of the normalized peak
/// population n(δ) at time τ.
pub fn rephasing_amplitude(profile: &CombProfile, tau: Time) -> Result<f64, MemoryError> {
    if tau == Time::ZERO {
        return Err(MemoryError::NonPositiveStorageTime);
    }
    let tau_s = tau.ps() as f64 / PS_PER_S as f64;
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (x, od) in profile.detuning_khz.iter().zip(&profile.optical_depth) {
        let n = (od - profile.comb.d0).max(0.0);
        let phase = 2.0 * PI * x * 1e3 * tau_s;
        re += n * phase.cos();
        im -= n * phase.sin();
        norm += n;
    }
    if !(norm > 0.0) {
        return Err(MemoryError::NotNormalizable);
    }
    Ok((re * re + im * im).sqrt() / norm)
}

/// Echo efficiency with the dephasing factor taken from the sampled
/// profile instead of the closed form.
pub fn afc_efficiency_numeric(profile: &CombProfile, tau: Time) -> Result<f64, MemoryError> {
    let amp = rephasing_amplitude(profile, tau)?;
    let dt = profile.comb.effective_depth();
    Ok(dt * dt * (-dt).exp() * (-profile.comb.d0).exp() * amp * amp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageTimeRow {
    pub storage_time: Time,
    pub delta_khz: f64,
    pub finesse: f64,
    pub d: f64,
    pub analytic: f64,
    pub numeric: f64,
}

/// Analytic and numeric efficiency for a family of combs with Δ = 1/τ.
pub fn efficiency_vs_storage_time(
    base: &CombParams,
    storage_times: &[Time],
    policy: DepthPolicy,
    samples_per_gamma: usize,
) -> Result<Vec<StorageTimeRow>, MemoryError> {
    storage_times
        .iter()
        .map(|&tau| {
            if tau == Time::ZERO {
                return Err(MemoryError::NonPositiveStorageTime);
            }
            let comb = base.at_storage_time(tau, policy);
            let profile = comb_profile(&comb, samples_per_gamma)?;
            Ok(StorageTimeRow {
                storage_time: tau,
                delta_khz: comb.delta_khz,
                finesse: comb.finesse(),
                d: comb.d,
                analytic: afc_efficiency_analytic(&comb),
                numeric: afc_efficiency_numeric(&profile, tau)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    /// Comb prepared: resonant light is echoed after the storage time.
    Afc,
    /// Empty transparency pit: resonant light passes.
    Transparency,
    /// Untailored line: everything inside it is absorbed as `e^{-OD}`.
    Absorbing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfficiencySource {
    Configured,
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryConfig {
    pub mode: MemoryMode,
    pub storage_time: Time,
    /// Echo efficiency relative to transparency-window transmission.
    pub efficiency: f64,
    pub efficiency_source: EfficiencySource,
    pub pit_transmission: f64,
    pub comb: CombParams,
    /// Shutter after the crystal; gates the signal detector.
    pub duty: PeriodicGate,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            mode: MemoryMode::Afc,
            storage_time: Time::from_us(2),
            efficiency: 0.072,
            efficiency_source: EfficiencySource::Configured,
            pit_transmission: 0.9,
            comb: CombParams::default(),
            duty: PeriodicGate::new(Time::from_ms(600), 0.5),
        }
    }
}

impl MemoryConfig {
    pub fn echo_efficiency(&self) -> f64 {
        match self.efficiency_source {
            EfficiencySource::Configured => self.efficiency,
            EfficiencySource::Analytic => afc_efficiency_analytic(&self.comb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Transmitted,
    Echoed,
    Absorbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageOutcome {
    pub disposition: Disposition,
    pub exit_time: Time,
}

/// Per-photon disposition probabilities derived from the memory and chain
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageModel {
    pub echo_delay: Time,
    /// Resonant photon: (echo, transmit).
    pub resonant: (f64, f64),
    /// Inside the absorption line but not resonant with the pit.
    pub in_line_transmission: f64,
}

impl StorageModel {
    pub fn new(memory: &MemoryConfig, chain: &ChainConfig) -> Self {
        let line = (-chain.line_optical_depth()).exp();
        let resonant = match memory.mode {
            MemoryMode::Afc => {
                let c = &memory.comb;
                (
                    memory.echo_efficiency() * memory.pit_transmission,
                    memory.pit_transmission * (-(c.effective_depth() + c.d0)).exp(),
                )
            }
            MemoryMode::Transparency => (0.0, memory.pit_transmission),
            MemoryMode::Absorbing => (0.0, line),
        };
        StorageModel {
            echo_delay: memory.storage_time,
            resonant,
            in_line_transmission: line,
        }
    }

    /// (echo, transmit) probabilities for a signal-arm event.
    pub fn probabilities(&self, event: &PhotonEvent, chain: &ChainConfig) -> (f64, f64) {
        if event.is_resonant() {
            self.resonant
        } else if chain.in_absorption_line(event.mode.as_ref()) {
            (0.0, self.in_line_transmission)
        } else {
            (0.0, 1.0)
        }
    }
}

pub fn storage_transform<R: Rng + ?Sized>(
    event: &PhotonEvent,
    model: &StorageModel,
    chain: &ChainConfig,
    rng: &mut R,
) -> StorageOutcome {
    debug_assert_eq!(event.arm, Arm::Signal);
    let (p_echo, p_transmit) = model.probabilities(event, chain);
    let u: f64 = rng.random();
    if u < p_echo {
        StorageOutcome {
            disposition: Disposition::Echoed,
            exit_time: event.time + model.echo_delay,
        }
    } else if u < p_echo + p_transmit {
        StorageOutcome {
            disposition: Disposition::Transmitted,
            exit_time: event.time,
        }
    } else {
        StorageOutcome {
            disposition: Disposition::Absorbed,
            exit_time: event.time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Origin, SpectralMode};
    use approx::assert_relative_eq;

    fn reported_comb() -> CombParams {
        CombParams {
            gamma_khz: 76.0,
            delta_khz: 488.0,
            d: 4.9,
            d0: 0.56,
            ..CombParams::default()
        }
    }

    #[test]
    fn analytic_efficiency_at_measured_comb() {
        let eta = afc_efficiency_analytic(&reported_comb());
        assert!((eta - 0.131).abs() < 5e-4, "eta = {eta}");
    }

    #[test]
    fn analytic_efficiency_without_absorbers_is_zero() {
        let c = CombParams {
            d: 0.0,
            ..reported_comb()
        };
        assert_eq!(afc_efficiency_analytic(&c), 0.0);
    }

    #[test]
    fn analytic_efficiency_peaks_at_effective_depth_two() {
        let base = reported_comb();
        let f = base.finesse();
        let at = |dt: f64| afc_efficiency_analytic(&CombParams { d: dt * f, ..base });
        let best = at(2.0);
        let expected = 4.0 * (-2.0f64).exp() * (-base.d0).exp() * (-7.0 / (f * f)).exp();
        assert_relative_eq!(best, expected, max_relative = 1e-12);
        assert!(at(1.9) < best && at(2.1) < best);
    }

    #[test]
    fn square_comb_with_half_width_is_half_duty() {
        let c = CombParams {
            gamma_khz: 250.0,
            delta_khz: 500.0,
            shape: PeakShape::Square,
            d0: 0.0,
            ..CombParams::default()
        };
        let p = comb_profile(&c, 20).unwrap();
        let filled = p.optical_depth.iter().filter(|od| **od > 0.0).count();
        assert_eq!(2 * filled, p.optical_depth.len());
    }

    #[test]
    fn gaussian_peak_center_depth() {
        let c = CombParams::default();
        let p = comb_profile(&c, 21).unwrap();
        let centre = p
            .detuning_khz
            .iter()
            .zip(&p.optical_depth)
            .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
            .unwrap();
        assert!(centre.0.abs() < p.step_khz);
        assert_relative_eq!(*centre.1, c.d + c.d0, max_relative = 1e-3);
    }

    #[test]
    fn comb_width_sets_period_count() {
        let p = comb_profile(&CombParams::default(), 20).unwrap();
        assert_eq!(p.periods(), 7);
        let span = p.step_khz * p.detuning_khz.len() as f64;
        assert_relative_eq!(span, 3_500.0, max_relative = 1e-12);
    }

    #[test]
    fn coarse_sampling_rejected() {
        assert_eq!(
            comb_profile(&CombParams::default(), 5),
            Err(MemoryError::ResolutionTooCoarse(5))
        );
    }

    #[test]
    fn invalid_combs_rejected() {
        let c = CombParams {
            gamma_khz: 600.0,
            ..CombParams::default()
        };
        assert!(matches!(comb_profile(&c, 20), Err(MemoryError::InvalidComb(_))));
    }

    #[test]
    fn anti_phase_readout_is_suppressed() {
        let c = reported_comb();
        let p = comb_profile(&c, 20).unwrap();
        let on_echo = afc_efficiency_numeric(&p, c.storage_time()).unwrap();
        let half = Time::from_ps_f64(c.storage_time().ps() as f64 / 2.0);
        let anti = afc_efficiency_numeric(&p, half).unwrap();
        assert!(anti < 0.05 * on_echo, "{anti} vs {on_echo}");
    }

    #[test]
    fn narrow_peaks_rephase_completely() {
        let c = CombParams {
            gamma_khz: 0.5,
            ..CombParams::default()
        };
        let p = comb_profile(&c, 20).unwrap();
        let amp = rephasing_amplitude(&p, c.storage_time()).unwrap();
        assert!(amp * amp > 0.999, "{amp}");
    }

    #[test]
    fn flat_profile_is_not_normalizable() {
        let c = CombParams {
            d: 0.0,
            ..CombParams::default()
        };
        let p = comb_profile(&c, 20).unwrap();
        assert_eq!(
            afc_efficiency_numeric(&p, c.storage_time()),
            Err(MemoryError::NotNormalizable)
        );
    }

    #[test]
    fn storage_time_rows() {
        let base = CombParams::default();
        let rows = efficiency_vs_storage_time(
            &base,
            &[Time::from_us(2), Time::from_ns(4_500)],
            DepthPolicy::FixedEffectiveDepth,
            20,
        )
        .unwrap();
        assert_relative_eq!(rows[0].delta_khz, 500.0, max_relative = 1e-12);
        assert_relative_eq!(rows[1].delta_khz, 222.222, max_relative = 1e-5);
        assert_eq!(rows[1].storage_time, Time::from_ns(4_500));
    }

    #[test]
    fn storage_time_round_trips_on_grid() {
        let c = CombParams::default();
        assert_eq!(c.storage_time(), Time::from_us(2));
        let c = c.at_storage_time(Time::from_ns(4_500), DepthPolicy::FixedPeakDepth);
        assert_eq!(c.storage_time(), Time::from_ns(4_500));
    }

    fn signal(mode: Option<SpectralMode>) -> PhotonEvent {
        PhotonEvent {
            arm: Arm::Signal,
            time: Time::from_us(1),
            mode,
            origin: Origin::Pair(0),
        }
    }

    #[test]
    fn storage_probabilities_by_mode() {
        let chain = ChainConfig::default();
        let afc = StorageModel::new(&MemoryConfig::default(), &chain);
        let res = signal(Some(SpectralMode::new(0, 1, 1)));
        assert_relative_eq!(afc.probabilities(&res, &chain).0, 0.072 * 0.9, epsilon = 1e-12);
        let side = signal(Some(SpectralMode::new(0, 2, 1)));
        assert_relative_eq!(afc.probabilities(&side, &chain).1, (-6.9f64).exp(), epsilon = 1e-12);
        let far = signal(Some(SpectralMode::new(1, 1, 1)));
        assert_eq!(afc.probabilities(&far, &chain), (0.0, 1.0));
        assert_eq!(afc.probabilities(&signal(None), &chain), (0.0, 1.0));

        let pit = StorageModel::new(
            &MemoryConfig {
                mode: MemoryMode::Transparency,
                pit_transmission: 1.0,
                ..MemoryConfig::default()
            },
            &chain,
        );
        assert_eq!(pit.probabilities(&res, &chain), (0.0, 1.0));
    }

    #[test]
    fn echo_leaves_after_storage_time() {
        let chain = ChainConfig::default();
        let model = StorageModel {
            echo_delay: Time::from_us(2),
            resonant: (1.0, 0.0),
            in_line_transmission: 0.0,
        };
        let mut rng = crate::rng::stream(1, "m", 0);
        let e = signal(Some(SpectralMode::new(0, 1, 1)));
        let out = storage_transform(&e, &model, &chain, &mut rng);
        assert_eq!(out.disposition, Disposition::Echoed);
        assert_eq!(out.exit_time, e.time + Time::from_us(2));
    }
}
