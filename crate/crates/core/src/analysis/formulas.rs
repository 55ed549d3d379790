use crate::chain::{path_transmission, ChainConfig};
use crate::time::Time;

use super::AnalysisError;

/// Transmission and detection factors used to back-propagate rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyBudget {
    /// Source-to-cryostat signal transmission.
    pub eta_s: f64,
    /// Source-to-detector idler transmission.
    pub eta_i: f64,
    /// Cryostat-to-detector signal transmission, memory duty included.
    pub eta_loss: f64,
    pub eta_ds: f64,
    pub eta_di: f64,
    pub source_duty: f64,
    pub memory_duty: f64,
}

impl EfficiencyBudget {
    /// Rounded figures as quoted for the reference set-up.
    pub fn reported() -> Self {
        EfficiencyBudget {
            eta_s: 0.18,
            eta_i: 0.22,
            eta_loss: 0.225,
            eta_ds: 0.32,
            eta_di: 0.10,
            source_duty: 1.0,
            memory_duty: 0.5,
        }
    }

    /// Budget implied by a chain's loss tables and the detector settings.
    pub fn from_chain(
        chain: &ChainConfig,
        eta_ds: f64,
        eta_di: f64,
        source_duty: f64,
        memory_duty: f64,
    ) -> Self {
        EfficiencyBudget {
            eta_s: path_transmission(&chain.signal.losses),
            eta_i: path_transmission(&chain.idler.losses),
            eta_loss: path_transmission(&chain.post_memory) * memory_duty,
            eta_ds,
            eta_di,
            source_duty,
            memory_duty,
        }
    }

    fn factors(&self) -> [(&'static str, f64); 5] {
        [
            ("eta_i", self.eta_i),
            ("eta_di", self.eta_di),
            ("eta_s", self.eta_s),
            ("eta_loss", self.eta_loss),
            ("eta_ds", self.eta_ds),
        ]
    }
}

/// Singles and background rates of the two outputs of a splitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundBudget {
    pub s_a: f64,
    pub b_a: f64,
    pub s_b: f64,
    pub b_b: f64,
    pub t_c: Time,
}

impl BackgroundBudget {
    /// Budget from background-to-signal ratios alone; the absolute scale
    /// cancels.
    pub fn from_ratios(b_over_s_a: f64, b_over_s_b: f64, t_c: Time) -> Self {
        BackgroundBudget {
            s_a: 1.0,
            b_a: b_over_s_a,
            s_b: 1.0,
            b_b: b_over_s_b,
            t_c,
        }
    }
}

/// How the zero-delay auto-correlation is averaged over a finite window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowAveraging {
    /// `1 + (g(0) − 1)·f`: only the excess over the accidental floor decays.
    #[default]
    Excess,
    /// `1 + g(0)·f`, kept for comparison.
    Total,
}

/// Mean of a symmetric exponential `exp(−|t|/t_c)` over a window of width
/// `window` centred on zero.
pub fn window_average_factor(t_c: Time, window: Time) -> f64 {
    if window == Time::ZERO {
        return 1.0;
    }
    if t_c == Time::ZERO {
        return 0.0;
    }
    let x = window.ps() as f64 / (2.0 * t_c.ps() as f64);
    (1.0 - (-x).exp()) / x
}

/// Returns `(g(0), g(window))` for thermal light with uncorrelated
/// background on both outputs.
pub fn g2_auto_theory(budget: &BackgroundBudget, window: Time, averaging: WindowAveraging) -> (f64, f64) {
    let n_a = budget.s_a + budget.b_a;
    let n_b = budget.s_b + budget.b_b;
    let excess = if n_a > 0.0 && n_b > 0.0 {
        budget.s_a * budget.s_b / (n_a * n_b)
    } else {
        0.0
    };
    let g0 = 1.0 + excess;
    let f = window_average_factor(budget.t_c, window);
    let gw = match averaging {
        WindowAveraging::Excess => 1.0 + excess * f,
        WindowAveraging::Total => 1.0 + g0 * f,
    };
    (g0, gw)
}

pub fn cauchy_schwarz_r(g2_si: f64, g2_ss: f64, g2_ii: f64) -> Result<f64, AnalysisError> {
    let denom = g2_ss * g2_ii;
    if denom <= 0.0 {
        return Err(AnalysisError::ZeroDenominator("g2_ss * g2_ii"));
    }
    Ok(g2_si * g2_si / denom)
}

pub fn visibility_from_g2(g2_si: f64) -> f64 {
    (g2_si - 1.0) / (g2_si + 1.0)
}

/// Cross-correlation expected before the memory given the echo value and
/// the non-resonant to resonant ratio `r`.
pub fn g2_input_prediction(g2_echo: f64, r: f64) -> f64 {
    g2_echo * (1.0 + r) / (1.0 + r * g2_echo)
}

/// Pair rate at the source output from a detected coincidence rate.
pub fn generated_rate(detected: f64, budget: &EfficiencyBudget) -> Result<f64, AnalysisError> {
    let mut denom = 1.0;
    for (name, f) in budget.factors() {
        if f <= 0.0 {
            return Err(AnalysisError::ZeroDenominator(name));
        }
        denom *= f;
    }
    Ok(detected / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeraldingEfficiency {
    pub raw: f64,
    pub dark_corrected: f64,
}

impl HeraldingEfficiency {
    /// Value at the source output, i.e. divided by the signal transmission.
    pub fn at_source(&self, budget: &EfficiencyBudget) -> f64 {
        self.dark_corrected / budget.eta_s
    }
}

/// Probability of a signal photon in front of the cryostat per herald.
/// `idler_dark_rate` is averaged over the acquisition, so it already
/// carries any idler gating.
pub fn heralding_efficiency(
    p_si: f64,
    p_i: f64,
    budget: &EfficiencyBudget,
    idler_dark_rate: f64,
    window: Time,
) -> Result<HeraldingEfficiency, AnalysisError> {
    if p_i <= 0.0 {
        return Err(AnalysisError::ZeroDenominator("p_i"));
    }
    let scale = budget.eta_ds * budget.eta_loss;
    if scale <= 0.0 {
        return Err(AnalysisError::ZeroDenominator("eta_ds * eta_loss"));
    }
    let corrected_p_i = p_i - idler_dark_rate * window.as_secs();
    if corrected_p_i <= 0.0 {
        return Err(AnalysisError::NonPositiveCorrection(corrected_p_i));
    }
    Ok(HeraldingEfficiency {
        raw: p_si / (p_i * scale),
        dark_corrected: p_si / (corrected_p_i * scale),
    })
}
