use crate::parallel::{map_indexed, ExecMode};
use crate::time::Time;

use super::AnalysisError;

/// Starts per parallel chunk.
const CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistogramSpec {
    pub bin_ps: u64,
    /// Inclusive lower delay edge.
    pub min_delay_ps: i64,
    /// Exclusive upper delay edge.
    pub max_delay_ps: i64,
}

impl HistogramSpec {
    pub fn new(bin: Time, min_delay_ps: i64, max_delay_ps: i64) -> Result<Self, AnalysisError> {
        if bin == Time::ZERO {
            return Err(AnalysisError::InvalidRange("bin width must be positive".into()));
        }
        if max_delay_ps <= min_delay_ps {
            return Err(AnalysisError::InvalidRange(format!(
                "max delay {max_delay_ps} ps must exceed min delay {min_delay_ps} ps"
            )));
        }
        let range_ps = (max_delay_ps - min_delay_ps) as u64;
        if range_ps % bin.ps() != 0 {
            return Err(AnalysisError::BinDoesNotDivideRange {
                bin_ps: bin.ps(),
                range_ps,
            });
        }
        Ok(HistogramSpec {
            bin_ps: bin.ps(),
            min_delay_ps,
            max_delay_ps,
        })
    }

    pub fn bins(&self) -> usize {
        ((self.max_delay_ps - self.min_delay_ps) as u64 / self.bin_ps) as usize
    }
}

/// Counts of `stop − start` delays, start-gated.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub spec: HistogramSpec,
    pub counts: Vec<u64>,
    pub n_start: u64,
    pub n_stop: u64,
    pub acquisition_time: Time,
}

impl CorrelationHistogram {
    pub fn empty(spec: HistogramSpec, acquisition_time: Time) -> Self {
        CorrelationHistogram {
            spec,
            counts: vec![0; spec.bins()],
            n_start: 0,
            n_stop: 0,
            acquisition_time,
        }
    }

    pub fn bin_start_ps(&self, k: usize) -> i64 {
        self.spec.min_delay_ps + (k as u64 * self.spec.bin_ps) as i64
    }

    pub fn bin_center_ps(&self, k: usize) -> f64 {
        self.bin_start_ps(k) as f64 + self.spec.bin_ps as f64 / 2.0
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another histogram with the same binning. Totals add too, so the
    /// parts must come from disjoint start sets.
    pub fn merge(&mut self, other: &CorrelationHistogram) {
        assert_eq!(self.spec, other.spec, "merging histograms with different binning");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_start += other.n_start;
        self.n_stop += other.n_stop;
        self.acquisition_time = self.acquisition_time + other.acquisition_time;
    }

    /// Index of the bin with the most counts (first on ties).
    pub fn peak_bin(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        self.counts.iter().position(|c| *c == max)
    }

    /// `bin_start_ns,counts` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start_ns,counts\n");
        for (k, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{}\n", self.bin_start_ps(k) as f64 / 1e3, c));
        }
        s
    }
}

fn is_sorted(v: &[Time]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

fn accumulate(starts: &[Time], stops: &[Time], spec: &HistogramSpec, counts: &mut [u64]) {
    let Some(first) = starts.first() else { return };
    let lo_of = |s: Time| s.ps() as i64 + spec.min_delay_ps;
    let first_lo = lo_of(*first);
    let mut lo = stops.partition_point(|t| (t.ps() as i64) < first_lo);
    for &start in starts {
        let s = start.ps() as i64;
        let min_t = s + spec.min_delay_ps;
        let max_t = s + spec.max_delay_ps;
        while lo < stops.len() && (stops[lo].ps() as i64) < min_t {
            lo += 1;
        }
        let mut j = lo;
        while j < stops.len() {
            let t = stops[j].ps() as i64;
            if t >= max_t {
                break;
            }
            counts[((t - min_t) as u64 / spec.bin_ps) as usize] += 1;
            j += 1;
        }
    }
}

/// Single pass over sorted start and stop streams. Starts are processed in
/// chunks whose partial histograms are merged in index order.
pub fn cross_correlation_histogram(
    starts: &[Time],
    stops: &[Time],
    spec: HistogramSpec,
    acquisition_time: Time,
    mode: ExecMode,
) -> Result<CorrelationHistogram, AnalysisError> {
    if !is_sorted(starts) {
        return Err(AnalysisError::UnsortedStream("start"));
    }
    if !is_sorted(stops) {
        return Err(AnalysisError::UnsortedStream("stop"));
    }
    let chunks = starts.len().div_ceil(CHUNK).max(1);
    let parts = map_indexed(mode, chunks, |k| {
        let lo = (k * CHUNK).min(starts.len());
        let hi = ((k + 1) * CHUNK).min(starts.len());
        let mut counts = vec![0u64; spec.bins()];
        accumulate(&starts[lo..hi], stops, &spec, &mut counts);
        counts
    });
    let mut hist = CorrelationHistogram::empty(spec, acquisition_time);
    for part in parts {
        for (a, b) in hist.counts.iter_mut().zip(part) {
            *a += b;
        }
    }
    hist.n_start = starts.len() as u64;
    hist.n_stop = stops.len() as u64;
    Ok(hist)
}
