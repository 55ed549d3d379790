use rand::Rng;

use crate::parallel::ExecMode;
use crate::time::Time;

use super::histogram::{cross_correlation_histogram, CorrelationHistogram, HistogramSpec};
use super::AnalysisError;

/// Half-open delay interval `[start_ps, end_ps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayWindow {
    pub start_ps: i64,
    pub end_ps: i64,
}

impl DelayWindow {
    pub fn new(start_ps: i64, end_ps: i64) -> Self {
        DelayWindow { start_ps, end_ps }
    }

    pub fn centered(center_ps: i64, width: Time) -> Self {
        let half = (width.ps() / 2) as i64;
        DelayWindow {
            start_ps: center_ps - half,
            end_ps: center_ps - half + width.ps() as i64,
        }
    }

    pub fn width_ps(&self) -> i64 {
        self.end_ps - self.start_ps
    }

    pub fn center_ps(&self) -> i64 {
        self.start_ps + self.width_ps() / 2
    }

    /// Bins whose centre falls inside the window.
    fn bins(&self, hist: &CorrelationHistogram) -> Result<std::ops::Range<usize>, AnalysisError> {
        let spec = &hist.spec;
        if self.start_ps < spec.min_delay_ps || self.end_ps > spec.max_delay_ps || self.end_ps <= self.start_ps {
            return Err(AnalysisError::WindowOutOfRange {
                start_ps: self.start_ps,
                end_ps: self.end_ps,
            });
        }
        let first_center = |edge: i64| -> usize {
            let rel = (edge - spec.min_delay_ps) as f64 / spec.bin_ps as f64 - 0.5;
            rel.ceil().max(0.0) as usize
        };
        let lo = first_center(self.start_ps);
        let hi = first_center(self.end_ps).min(hist.counts.len());
        Ok(lo..hi.max(lo))
    }
}

/// Windowed cross-correlation estimate from raw counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    /// Accidental-equivalent stop probability per start (`p_s·p_i = p_acc`).
    pub p_s: f64,
    /// Start probability per trial window.
    pub p_i: f64,
    /// Coincidence probability per trial window.
    pub p_si: f64,
    pub g2: f64,
    pub sigma_g2: f64,
    pub window_ps: u64,
    pub center_ps: i64,
    pub coincidences: u64,
    /// Accidental coincidences expected in the window from the noise level.
    pub accidentals: f64,
    pub noise_counts: u64,
    pub noise_bins: usize,
    pub window_bins: usize,
}

/// g² in `window`, normalized by the accidental level of the `noise`
/// windows of the same histogram. No background is subtracted.
pub fn g2_windowed(
    hist: &CorrelationHistogram,
    window: DelayWindow,
    noise: &[DelayWindow],
) -> Result<CorrelationResult, AnalysisError> {
    let signal_bins = window.bins(hist)?;
    let coincidences: u64 = hist.counts[signal_bins.clone()].iter().sum();
    let mut noise_counts = 0u64;
    let mut noise_bins = 0usize;
    for w in noise {
        let r = w.bins(hist)?;
        noise_bins += r.len();
        noise_counts += hist.counts[r].iter().sum::<u64>();
    }
    if noise_bins == 0 || noise_counts == 0 {
        return Err(AnalysisError::EmptyNoiseWindow);
    }
    let window_bins = signal_bins.len();
    let accidentals = noise_counts as f64 * window_bins as f64 / noise_bins as f64;
    let g2 = coincidences as f64 / accidentals;
    let sigma_g2 = g2.max(1.0 / accidentals)
        * (1.0 / coincidences.max(1) as f64 + 1.0 / noise_counts as f64).sqrt();
    let window_ps = window_bins as u64 * hist.spec.bin_ps;
    let trials = hist.acquisition_time.ps() as f64 / window_ps as f64;
    let (p_i, p_si, p_s) = if trials > 0.0 && hist.n_start > 0 {
        (
            hist.n_start as f64 / trials,
            coincidences as f64 / trials,
            accidentals / hist.n_start as f64,
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok(CorrelationResult {
        p_s,
        p_i,
        p_si,
        g2,
        sigma_g2,
        window_ps,
        center_ps: window.center_ps(),
        coincidences,
        accidentals,
        noise_counts,
        noise_bins,
        window_bins,
    })
}

/// Sends each event to one of two outputs with probability 1/2.
pub fn virtual_split<R: Rng + ?Sized>(stream: &[Time], rng: &mut R) -> (Vec<Time>, Vec<Time>) {
    let mut a = Vec::with_capacity(stream.len() / 2 + 1);
    let mut b = Vec::with_capacity(stream.len() / 2 + 1);
    for &t in stream {
        if rng.random::<bool>() {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    (a, b)
}

/// Hanbury Brown–Twiss g² of one stream through a virtual 50/50 splitter.
pub fn autocorrelation_g2<R: Rng + ?Sized>(
    stream: &[Time],
    splitter: &mut R,
    spec: HistogramSpec,
    acquisition_time: Time,
    window: DelayWindow,
    noise: &[DelayWindow],
    mode: ExecMode,
) -> Result<(CorrelationHistogram, CorrelationResult), AnalysisError> {
    let (a, b) = virtual_split(stream, splitter);
    let hist = cross_correlation_histogram(&a, &b, spec, acquisition_time, mode)?;
    let result = g2_windowed(&hist, window, noise)?;
    Ok((hist, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_hist(level: u64) -> CorrelationHistogram {
        let spec = HistogramSpec::new(Time::from_ns(5), -2_000_000, 2_000_000).unwrap();
        let mut h = CorrelationHistogram::empty(spec, Time::from_secs(100));
        h.counts.iter_mut().for_each(|c| *c = level);
        h.n_start = 1_000;
        h.n_stop = 1_000;
        h
    }

    fn sidebands() -> Vec<DelayWindow> {
        vec![
            DelayWindow::new(-2_000_000, -1_000_000),
            DelayWindow::new(1_000_000, 2_000_000),
        ]
    }

    #[test]
    fn flat_histogram_gives_unity() {
        let r = g2_windowed(&flat_hist(7), DelayWindow::centered(0, Time::from_ns(400)), &sidebands()).unwrap();
        assert_eq!(r.window_bins, 80);
        assert_eq!(r.noise_bins, 400);
        assert_eq!(r.g2, 1.0);
        assert!((r.p_si - r.p_s * r.p_i).abs() < 1e-15 * r.p_si.max(1.0));
        let expected_sigma = (1.0 / 560.0f64 + 1.0 / 2800.0).sqrt();
        assert!((r.sigma_g2 - expected_sigma).abs() < 1e-12);
    }

    #[test]
    fn peak_over_floor() {
        let mut h = flat_hist(10);
        let zero = ((0 - h.spec.min_delay_ps) / 5_000) as usize;
        h.counts[zero] += 800;
        let r = g2_windowed(&h, DelayWindow::centered(0, Time::from_ns(400)), &sidebands()).unwrap();
        assert!((r.g2 - 1.0 - 800.0 / 800.0).abs() < 1e-12);
    }

    #[test]
    fn empty_noise_window_is_an_error() {
        let h = flat_hist(0);
        assert_eq!(
            g2_windowed(&h, DelayWindow::centered(0, Time::from_ns(400)), &sidebands()),
            Err(AnalysisError::EmptyNoiseWindow)
        );
        assert_eq!(
            g2_windowed(&flat_hist(3), DelayWindow::centered(0, Time::from_ns(400)), &[]),
            Err(AnalysisError::EmptyNoiseWindow)
        );
    }

    #[test]
    fn window_outside_range_is_an_error() {
        let r = g2_windowed(
            &flat_hist(1),
            DelayWindow::centered(1_900_000, Time::from_ns(400)),
            &sidebands(),
        );
        assert!(matches!(r, Err(AnalysisError::WindowOutOfRange { .. })));
    }

    #[test]
    fn off_grid_window_keeps_width() {
        let h = flat_hist(1);
        let w = DelayWindow::centered(450_450, Time::from_ns(400));
        let r = g2_windowed(&h, w, &sidebands()).unwrap();
        assert_eq!(r.window_bins, 80);
    }

    #[test]
    fn split_is_a_partition() {
        let stream: Vec<Time> = (0..1000).map(Time).collect();
        let (a, b) = virtual_split(&stream, &mut crate::rng::stream(1, "s", 0));
        assert_eq!(a.len() + b.len(), 1000);
        let mut all: Vec<Time> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, stream);
    }
}
