use crate::chain::DichroismModel;

use super::AnalysisError;

/// Coincidence count at one polarization angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub theta_deg: f64,
    pub counts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DichroismFit {
    /// Non-resonant level `P_nr`.
    pub non_resonant: f64,
    /// Resonant amplitude `P_r`.
    pub resonant: f64,
    /// `P_nr / P_r`.
    pub ratio: f64,
    pub visibility: f64,
}

fn extremes(model: &DichroismModel) -> (f64, f64) {
    let lo = model.od_d1.min(model.od_d2);
    let hi = model.od_d1.max(model.od_d2);
    ((-lo).exp(), (-hi).exp())
}

/// Contrast between the two polarization extremes for a given `P_nr/P_r`.
pub fn visibility_for_ratio(model: &DichroismModel, r: f64) -> f64 {
    let (t_max, t_min) = extremes(model);
    (t_max - t_min) / (t_max + t_min + 2.0 * r)
}

/// Inverse of [`visibility_for_ratio`]. Negative results mean the
/// visibility exceeds what the model allows even without noise.
pub fn ratio_from_visibility(model: &DichroismModel, visibility: f64) -> f64 {
    let (t_max, t_min) = extremes(model);
    ((t_max - t_min) / visibility - (t_max + t_min)) / 2.0
}

/// Expected counts on a regular angle grid from 0° to 90°.
pub fn synthetic_scan(model: &DichroismModel, r: f64, resonant_counts: f64, step_deg: f64) -> Vec<ScanPoint> {
    let steps = (90.0 / step_deg).round() as usize;
    (0..=steps)
        .map(|k| {
            let theta_deg = (k as f64 * step_deg).min(90.0);
            let od = model.optical_depth(theta_deg).expect("grid stays in range");
            ScanPoint {
                theta_deg,
                counts: resonant_counts * (r + (-od).exp()),
            }
        })
        .collect()
}

/// Poisson-weighted least squares of `counts = P_nr + P_r·e^{−OD(θ)}`.
pub fn dichroism_fit(points: &[ScanPoint], model: &DichroismModel) -> Result<DichroismFit, AnalysisError> {
    let mut xs = Vec::with_capacity(points.len());
    for p in points {
        let od = model
            .optical_depth(p.theta_deg)
            .map_err(|e| AnalysisError::DegenerateFit(e.to_string()))?;
        xs.push((-od).exp());
    }
    let (mut sw, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, &x) in points.iter().zip(&xs) {
        let w = 1.0 / p.counts.max(1.0);
        sw += w;
        sx += w * x;
        sxx += w * x * x;
        sy += w * p.counts;
        sxy += w * x * p.counts;
    }
    let det = sw * sxx - sx * sx;
    if points.len() < 2 || det <= 1e-12 * sw * sxx {
        return Err(AnalysisError::DegenerateFit("angles do not span the optical-depth range".into()));
    }
    let resonant = (sw * sxy - sx * sy) / det;
    let non_resonant = (sy - resonant * sx) / sw;
    if resonant <= 0.0 {
        return Err(AnalysisError::DegenerateFit(format!(
            "no resonant contrast (fitted amplitude {resonant:.3e})"
        )));
    }
    let ratio = non_resonant / resonant;
    Ok(DichroismFit {
        non_resonant,
        resonant,
        ratio,
        visibility: visibility_for_ratio(model, ratio),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn noise_free_visibility() {
        let m = DichroismModel::default();
        let e1 = (-1.4f64).exp();
        let e2 = (-6.9f64).exp();
        assert_relative_eq!(visibility_for_ratio(&m, 0.0), (e1 - e2) / (e1 + e2), epsilon = 1e-15);
    }

    #[test]
    fn inversion_round_trip() {
        let m = DichroismModel::default();
        for r in [0.0, 0.005, 0.013, 0.05, 0.3] {
            assert_relative_eq!(ratio_from_visibility(&m, visibility_for_ratio(&m, r)), r, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_scan_is_recovered() {
        let m = DichroismModel::default();
        let scan = synthetic_scan(&m, 0.02, 5_000.0, 10.0);
        assert_eq!(scan.len(), 10);
        assert_eq!(scan.last().unwrap().theta_deg, 90.0);
        let fit = dichroism_fit(&scan, &m).unwrap();
        assert_relative_eq!(fit.ratio, 0.02, max_relative = 1e-9);
        assert_relative_eq!(fit.resonant, 5_000.0, max_relative = 1e-9);
    }

    #[test]
    fn flat_counts_are_degenerate() {
        let m = DichroismModel::default();
        let flat: Vec<ScanPoint> = (0..10)
            .map(|k| ScanPoint { theta_deg: 10.0 * k as f64, counts: 50.0 })
            .collect();
        assert!(matches!(dichroism_fit(&flat, &m), Err(AnalysisError::DegenerateFit(_))));
        let single_angle = vec![ScanPoint { theta_deg: 30.0, counts: 5.0 }; 4];
        assert!(matches!(dichroism_fit(&single_angle, &m), Err(AnalysisError::DegenerateFit(_))));
    }
}
