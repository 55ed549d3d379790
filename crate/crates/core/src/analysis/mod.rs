//! Coincidence statistics: correlation histograms, windowed g², virtual
//! beam-splitter auto-correlation, and the closed-form figures of merit
//! built on them.

mod dichroism;
mod formulas;
mod g2;
mod histogram;
pub mod stats;

use thiserror::Error;

pub use dichroism::{
    dichroism_fit, ratio_from_visibility, synthetic_scan, visibility_for_ratio, DichroismFit,
    ScanPoint,
};
pub use formulas::{
    cauchy_schwarz_r, g2_auto_theory, g2_input_prediction, generated_rate, heralding_efficiency,
    visibility_from_g2, window_average_factor, BackgroundBudget, EfficiencyBudget,
    HeraldingEfficiency, WindowAveraging,
};
pub use g2::{autocorrelation_g2, g2_windowed, virtual_split, CorrelationResult, DelayWindow};
pub use histogram::{cross_correlation_histogram, CorrelationHistogram, HistogramSpec};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("bin width {bin_ps} ps does not divide the delay range {range_ps} ps")]
    BinDoesNotDivideRange { bin_ps: u64, range_ps: u64 },
    #[error("invalid histogram range: {0}")]
    InvalidRange(String),
    #[error("{0} stream is not sorted by time")]
    UnsortedStream(&'static str),
    #[error("window [{start_ps}, {end_ps}) ps lies outside the histogram range")]
    WindowOutOfRange { start_ps: i64, end_ps: i64 },
    #[error("noise window holds no accidental counts")]
    EmptyNoiseWindow,
    #[error("zero or negative denominator: {0}")]
    ZeroDenominator(&'static str),
    #[error("dark-count correction leaves a non-positive herald probability ({0})")]
    NonPositiveCorrection(f64),
    #[error("degenerate dichroism fit: {0}")]
    DegenerateFit(String),
}
