//! Photon-level domain types shared by the source, optical chain, memory and
//! detection stages.

use crate::time::Time;

/// Spacing between the central and the two secondary frequency clusters.
pub const CLUSTER_SPACING_MHZ: f64 = 44_500.0;
/// Longitudinal-mode spacing of the pair-source cavity.
pub const MODE_SPACING_MHZ: f64 = 412.0;
pub const MODES_PER_CLUSTER: u8 = 4;
pub const CLUSTERS: [i8; 3] = [-1, 0, 1];
pub const MODE_COUNT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Signal,
    Idler,
}

/// One longitudinal mode of the clustered pair spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralMode {
    pub cluster_index: i8,
    pub mode_index: u8,
    /// Offset from the memory-resonant mode, in MHz.
    pub detuning_mhz: f64,
}

impl SpectralMode {
    pub fn new(cluster_index: i8, mode_index: u8, resonant_index: u8) -> Self {
        debug_assert!(CLUSTERS.contains(&cluster_index));
        debug_assert!(mode_index < MODES_PER_CLUSTER && resonant_index < MODES_PER_CLUSTER);
        let detuning_mhz = cluster_index as f64 * CLUSTER_SPACING_MHZ
            + (mode_index as f64 - resonant_index as f64) * MODE_SPACING_MHZ;
        SpectralMode {
            cluster_index,
            mode_index,
            detuning_mhz,
        }
    }

    /// All twelve modes, cluster-major order.
    pub fn all(resonant_index: u8) -> [SpectralMode; MODE_COUNT] {
        let mut out = [SpectralMode::new(0, 0, resonant_index); MODE_COUNT];
        let mut k = 0;
        for c in CLUSTERS {
            for m in 0..MODES_PER_CLUSTER {
                out[k] = SpectralMode::new(c, m, resonant_index);
                k += 1;
            }
        }
        out
    }

    pub fn is_resonant(&self) -> bool {
        self.detuning_mhz == 0.0
    }

    pub fn is_main_cluster(&self) -> bool {
        self.cluster_index == 0
    }

    /// Flat index in `0..12` matching [`SpectralMode::all`].
    pub fn flat_index(&self) -> usize {
        (self.cluster_index + 1) as usize * MODES_PER_CLUSTER as usize + self.mode_index as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Pair(u64),
    BroadbandNoise,
}

/// A photon leaving the source in one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonEvent {
    pub arm: Arm,
    pub time: Time,
    /// `None` for broadband noise, which has no cavity mode.
    pub mode: Option<SpectralMode>,
    pub origin: Origin,
}

impl PhotonEvent {
    pub fn is_resonant(&self) -> bool {
        self.mode.is_some_and(|m| m.is_resonant())
    }
}
