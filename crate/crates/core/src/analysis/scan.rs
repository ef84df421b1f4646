use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::model::OutcomePair;

/// Outcome counts at one scan angle; `delta = α − β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub delta: f64,
    pub counts: [u64; 4],
}

/// `amplitude · (1 ± visibility · cos 2(δ − theta0))` for one outcome type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub outcome: String,
    pub amplitude: f64,
    pub visibility: f64,
    /// Radians, in `(−π/2, π/2]`.
    pub theta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCurves {
    pub points: Vec<ScanPoint>,
    pub fits: Vec<FringeFit>,
    pub mean_visibility: f64,
    /// Count-weighted phase of the four fits.
    pub phase_offset: f64,
    /// Phase offset beyond the tolerance given to [`angle_scan_curves`].
    pub shifted: bool,
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..3 {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some([b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]])
}

/// Least-squares fringe fits, one per outcome type.
///
/// Linear in `(c0, c1, c2)` via `y = c0 + c1·cos 2δ + c2·sin 2δ`; then
/// `V = √(c1² + c2²)/c0` and the phase follows from `atan2`. Anti-correlated
/// outcomes (+− and −+) carry the minus sign of the model.
pub fn angle_scan_curves(points: &[ScanPoint], phase_tolerance: f64) -> Result<ScanCurves, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::FitFailed("fewer than three scan angles"));
    }
    let mut fits = Vec::with_capacity(4);
    for (k, pair) in OutcomePair::ALL.iter().enumerate() {
        let mut ata = [[0.0; 3]; 3];
        let mut aty = [0.0; 3];
        for p in points {
            let row = [1.0, (2.0 * p.delta).cos(), (2.0 * p.delta).sin()];
            let y = p.counts[k] as f64;
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                aty[i] += row[i] * y;
            }
        }
        let [c0, mut c1, mut c2] = solve3(ata, aty).ok_or(AnalysisError::FitFailed("degenerate angle set"))?;
        if !(c0 > 0.0) {
            return Err(AnalysisError::FitFailed("no counts"));
        }
        if pair.parity() < 0.0 {
            c1 = -c1;
            c2 = -c2;
        }
        fits.push(FringeFit {
            outcome: pair.label(),
            amplitude: c0,
            visibility: (c1 * c1 + c2 * c2).sqrt() / c0,
            theta0: 0.5 * c2.atan2(c1),
        });
    }
    let wsum: f64 = fits.iter().map(|f| f.amplitude * f.visibility).sum();
    // average phases on the doubled circle so ±π/2 wrap-around is harmless
    let (sx, sy) = fits.iter().fold((0.0, 0.0), |(x, y), f| {
        let w = f.amplitude * f.visibility;
        (x + w * (2.0 * f.theta0).cos(), y + w * (2.0 * f.theta0).sin())
    });
    let phase_offset = if wsum > 0.0 { 0.5 * sy.atan2(sx) } else { 0.0 };
    let mean_visibility = fits.iter().map(|f| f.visibility).sum::<f64>() / 4.0;
    Ok(ScanCurves {
        points: points.to_vec(),
        shifted: mean_visibility > 0.1 && phase_offset.abs() > phase_tolerance,
        fits,
        mean_visibility,
        phase_offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{qm_joint_prob, AngleSetting, QmStateModel};
    use std::f64::consts::PI;

    fn synthetic(v: f64, phi: f64) -> Vec<ScanPoint> {
        let m = QmStateModel::new(v).unwrap();
        (0..34)
            .map(|k| {
                let beta = k as f64 * PI / 34.0;
                // shifting α by φ emulates a residual rotation
                let s = AngleSetting::new(phi, beta);
                let delta = -beta;
                ScanPoint {
                    delta,
                    counts: OutcomePair::ALL.map(|p| (qm_joint_prob(p, s, &m) * 4e6).round() as u64),
                }
            })
            .collect()
    }

    #[test]
    fn recovers_ideal_fringe() {
        let c = angle_scan_curves(&synthetic(1.0, 0.0), 0.01).unwrap();
        for f in &c.fits {
            assert!((f.visibility - 1.0).abs() < 0.01, "{f:?}");
            assert!((f.amplitude - 1e6).abs() < 1e3);
        }
        assert!(c.phase_offset.abs() < 1e-3);
        assert!(!c.shifted);
    }

    #[test]
    fn recovers_phase_offset() {
        let c = angle_scan_curves(&synthetic(0.98, 0.1), 0.01).unwrap();
        assert!((c.mean_visibility - 0.98).abs() < 0.01);
        // cos 2(φ − β) = cos 2(δ + φ), so the fitted phase is −φ
        assert!((c.phase_offset + 0.1).abs() < 1e-3);
        assert!(c.shifted);
    }

    #[test]
    fn flat_input_has_no_visibility() {
        let pts: Vec<ScanPoint> = (0..34)
            .map(|k| ScanPoint {
                delta: k as f64 * PI / 34.0,
                counts: [500; 4],
            })
            .collect();
        let c = angle_scan_curves(&pts, 0.01).unwrap();
        assert!(c.mean_visibility < 1e-9);
        assert!(!c.shifted);
    }

    #[test]
    fn degenerate_angles_fail() {
        let pts = vec![
            ScanPoint {
                delta: 0.0,
                counts: [1; 4],
            };
            5
        ];
        assert!(angle_scan_curves(&pts, 0.01).is_err());
    }
}
