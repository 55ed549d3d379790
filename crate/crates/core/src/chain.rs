//! Optical chain between the source and the detectors: spectral filters,
//! lumped passive losses and polarization-dependent crystal absorption, all
//! applied as independent per-photon survival probabilities.

use rand::Rng;
use thiserror::Error;

use crate::model::{Arm, PhotonEvent, SpectralMode, MODE_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("polarization angle {0}° outside [0°, 90°]")]
    AngleOutOfRange(f64),
}

/// Fabry–Perot filter approximated by a periodic Lorentzian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavitySpec {
    pub fsr_mhz: f64,
    pub linewidth_fwhm_mhz: f64,
    pub peak_transmission: f64,
}

impl CavitySpec {
    /// Lineshape normalized to 1 on resonance.
    pub fn relative_transmission(&self, detuning_mhz: f64) -> f64 {
        let wrapped = detuning_mhz - self.fsr_mhz * (detuning_mhz / self.fsr_mhz).round();
        let x = 2.0 * wrapped / self.linewidth_fwhm_mhz;
        1.0 / (1.0 + x * x)
    }
}

pub fn cavity_transmission(spec: &CavitySpec, detuning_mhz: f64) -> f64 {
    spec.peak_transmission * spec.relative_transmission(detuning_mhz)
}

/// Ordered `(element, transmission)` rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTable {
    pub elements: Vec<(String, f64)>,
}

impl LossTable {
    pub fn new<S: Into<String>>(rows: impl IntoIterator<Item = (S, f64)>) -> Self {
        LossTable {
            elements: rows.into_iter().map(|(n, t)| (n.into(), t)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.elements
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| *t)
    }

    pub fn without(&self, name: &str) -> LossTable {
        LossTable {
            elements: self
                .elements
                .iter()
                .filter(|(n, _)| n != name)
                .cloned()
                .collect(),
        }
    }

    /// Source-to-cryostat signal path.
    pub fn signal_default() -> Self {
        LossTable::new([
            ("dichroic_mirror", 0.99),
            ("glass_plate", 0.84),
            ("band_pass_filter", 0.95),
            ("etalon", 0.90),
            ("fiber", 0.31),
            ("other_optical_elements", 0.80),
        ])
    }

    /// Source-to-detector idler path.
    pub fn idler_default() -> Self {
        LossTable::new([
            ("dichroic_mirror", 0.93),
            ("glass_plate", 0.80),
            ("filter_cavity", 0.50),
            ("fiber", 0.60),
        ])
    }

    /// Cryostat-to-detector signal path; the memory duty cycle is a
    /// detector gate and is not listed here.
    pub fn post_memory_default() -> Self {
        LossTable::new([("cryostat", 0.75), ("fiber", 0.60)])
    }
}

/// Readable label for a snake_case element key, e.g. `filter_cavity` →
/// `Filter Cavity`.
pub fn element_label(key: &str) -> String {
    key.split('_')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn path_transmission(table: &LossTable) -> f64 {
    table.elements.iter().map(|(_, t)| *t).product()
}

/// Optical depth of the crystal line versus polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DichroismModel {
    pub od_d1: f64,
    pub od_d2: f64,
}

impl Default for DichroismModel {
    fn default() -> Self {
        DichroismModel {
            od_d1: 1.4,
            od_d2: 6.9,
        }
    }
}

impl DichroismModel {
    /// `OD(θ) = od_d1·cos²θ + od_d2·sin²θ`, θ measured from D1 in degrees.
    pub fn optical_depth(&self, theta_deg: f64) -> Result<f64, ChainError> {
        if !(0.0..=90.0).contains(&theta_deg) {
            return Err(ChainError::AngleOutOfRange(theta_deg));
        }
        let (s, c) = theta_deg.to_radians().sin_cos();
        Ok(self.od_d1 * c * c + self.od_d2 * s * s)
    }
}

/// Survival through the crystal: resonant light decays as `e^{-OD(θ)}`,
/// light outside the absorption line passes.
pub fn crystal_survival(
    model: &DichroismModel,
    theta_deg: f64,
    resonant: bool,
) -> Result<f64, ChainError> {
    let od = model.optical_depth(theta_deg)?;
    Ok(if resonant { (-od).exp() } else { 1.0 })
}

/// A spectral filter whose on-resonance loss is the loss-table row `row`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilter {
    pub row: String,
    pub spec: CavitySpec,
}

/// Passive losses plus spectral filters for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmChain {
    pub losses: LossTable,
    pub filters: Vec<SpectralFilter>,
}

impl ArmChain {
    pub fn passive_transmission(&self) -> f64 {
        path_transmission(&self.losses)
    }

    /// Survival probability for a photon in `mode`; broadband light (no
    /// mode) sees only the passive losses.
    pub fn survival(&self, mode: Option<&SpectralMode>) -> f64 {
        let spectral: f64 = match mode {
            Some(m) => self
                .filters
                .iter()
                .map(|f| f.spec.relative_transmission(m.detuning_mhz))
                .product(),
            None => 1.0,
        };
        self.passive_transmission() * spectral
    }

    /// Drops a filter together with its loss row.
    pub fn without_filter(&self, row: &str) -> ArmChain {
        ArmChain {
            losses: self.losses.without(row),
            filters: self.filters.iter().filter(|f| f.row != row).cloned().collect(),
        }
    }

    pub fn mode_survival_table(&self, resonant_index: u8) -> [f64; MODE_COUNT] {
        SpectralMode::all(resonant_index).map(|m| self.survival(Some(&m)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    /// Source to cryostat, including the etalon.
    pub signal: ArmChain,
    /// Cryostat to signal detector.
    pub post_memory: LossTable,
    /// Source to idler detector, including the filter cavity.
    pub idler: ArmChain,
    pub dichroism: DichroismModel,
    /// Signal polarization relative to D1, degrees.
    pub polarization_deg: f64,
    /// Half width of the inhomogeneous absorption line, MHz.
    pub inhomogeneous_half_width_mhz: f64,
}

pub const FILTER_CAVITY_ROW: &str = "filter_cavity";
pub const ETALON_ROW: &str = "etalon";

impl Default for ChainConfig {
    fn default() -> Self {
        let signal_losses = LossTable::signal_default();
        let idler_losses = LossTable::idler_default();
        ChainConfig {
            signal: ArmChain {
                filters: vec![SpectralFilter {
                    row: ETALON_ROW.into(),
                    spec: CavitySpec {
                        fsr_mhz: 60_000.0,
                        linewidth_fwhm_mhz: 10_000.0,
                        peak_transmission: signal_losses.get(ETALON_ROW).unwrap_or(1.0),
                    },
                }],
                losses: signal_losses,
            },
            post_memory: LossTable::post_memory_default(),
            idler: ArmChain {
                filters: vec![SpectralFilter {
                    row: FILTER_CAVITY_ROW.into(),
                    spec: CavitySpec {
                        fsr_mhz: 16_800.0,
                        linewidth_fwhm_mhz: 80.0,
                        peak_transmission: idler_losses.get(FILTER_CAVITY_ROW).unwrap_or(1.0),
                    },
                }],
                losses: idler_losses,
            },
            dichroism: DichroismModel::default(),
            polarization_deg: 90.0,
            inhomogeneous_half_width_mhz: 2_500.0,
        }
    }
}

impl ChainConfig {
    pub fn without_filter_cavity(&self) -> ChainConfig {
        ChainConfig {
            idler: self.idler.without_filter(FILTER_CAVITY_ROW),
            ..self.clone()
        }
    }

    pub fn has_filter_cavity(&self) -> bool {
        self.idler.filters.iter().any(|f| f.row == FILTER_CAVITY_ROW)
    }

    /// Source-to-detector survival of a signal photon, excluding the crystal.
    pub fn signal_survival(&self, mode: Option<&SpectralMode>) -> f64 {
        self.signal.survival(mode) * path_transmission(&self.post_memory)
    }

    pub fn arm_survival(&self, arm: Arm, mode: Option<&SpectralMode>) -> f64 {
        match arm {
            Arm::Signal => self.signal_survival(mode),
            Arm::Idler => self.idler.survival(mode),
        }
    }

    /// Whether a photon falls inside the crystal's inhomogeneous line.
    pub fn in_absorption_line(&self, mode: Option<&SpectralMode>) -> bool {
        mode.is_some_and(|m| m.detuning_mhz.abs() < self.inhomogeneous_half_width_mhz)
    }

    pub fn line_optical_depth(&self) -> f64 {
        self.dichroism
            .optical_depth(self.polarization_deg)
            .unwrap_or(self.dichroism.od_d2)
    }
}

/// Independent Bernoulli thinning of each event by its arm's survival.
pub fn apply_chain<R: Rng + ?Sized>(
    events: &[PhotonEvent],
    chain: &ChainConfig,
    rng: &mut R,
) -> Vec<PhotonEvent> {
    events
        .iter()
        .filter(|e| rng.random::<f64>() < chain.arm_survival(e.arm, e.mode.as_ref()))
        .copied()
        .collect()
}
