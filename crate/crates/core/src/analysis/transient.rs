use serde::{Deserialize, Serialize};

use super::{weighted_mean, AnalysisError, Estimate, SlotRange, SlotSeries};
use crate::grid::SlotGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientConfig {
    /// Light time across the setup, seconds.
    pub tau: f64,
    pub k_sigma: f64,
}

impl TransientConfig {
    /// Consecutive deviating slots needed: `ceil(tau / slot_width)`.
    pub fn persistence(&self, grid: &SlotGrid) -> usize {
        ((self.tau / grid.slot_width()) - 1e-9).ceil().max(1.0) as usize
    }
}

/// A run of same-sign deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRun {
    pub observable: String,
    pub slots: SlotRange,
    /// Seconds from the pulse start.
    pub start: f64,
    pub end: f64,
    /// Mean deviation from the plateau reference over the run.
    pub magnitude: f64,
    /// Smallest |z| inside the run.
    pub min_abs_z: f64,
    pub reference: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum TransientVerdict {
    None,
    Deviation(DeviationRun),
}

impl TransientVerdict {
    pub fn is_deviation(&self) -> bool {
        matches!(self, TransientVerdict::Deviation(_))
    }
}

/// Looks for a persistent deviation early in the pulse.
///
/// Tested slots are those lying entirely within `[0, 2·tau]`; the reference
/// is the weighted mean of the significant in-pulse slots starting at or
/// after `2·tau`. A transient is flagged when at least
/// [`TransientConfig::persistence`] consecutive significant tested slots
/// differ from the reference by more than `k_sigma` in the same direction.
/// Non-significant or undefined slots break a run.
pub fn detect_transient(
    observable: &str,
    values: &[Option<Estimate>],
    mask: &[bool],
    in_pulse: SlotRange,
    grid: &SlotGrid,
    cfg: &TransientConfig,
) -> Result<TransientVerdict, AnalysisError> {
    let cut = 2.0 * cfg.tau;
    let need = cfg.persistence(grid);
    let usable = |i: usize| -> Option<Estimate> {
        if mask.get(i).copied().unwrap_or(false) {
            values.get(i).copied().flatten()
        } else {
            None
        }
    };
    let tested: Vec<usize> = (0..grid.n_slots)
        .take_while(|&i| grid.slot_start(i + 1) <= cut + 1e-15)
        .collect();
    let n_tested = tested.iter().filter(|&&i| usable(i).is_some()).count();
    if n_tested < need {
        return Err(AnalysisError::TooFewSignificant { got: n_tested, need });
    }
    let reference_slots: Vec<Estimate> = (in_pulse.first..=in_pulse.last)
        .filter(|&i| grid.slot_start(i) >= cut)
        .filter_map(usable)
        .collect();
    if reference_slots.len() < 2 {
        return Err(AnalysisError::TooFewSignificant {
            got: reference_slots.len(),
            need: 2,
        });
    }
    let reference = weighted_mean(reference_slots).ok_or(AnalysisError::TooFewSignificant { got: 0, need: 2 })?;

    let z: Vec<Option<f64>> = tested
        .iter()
        .map(|&i| {
            usable(i).map(|e| {
                let s = (e.sigma * e.sigma + reference.sigma * reference.sigma).sqrt();
                if s > 0.0 {
                    (e.value - reference.value) / s
                } else {
                    0.0
                }
            })
        })
        .collect();

    let mut best: Option<(usize, usize)> = None;
    let mut run: Option<(usize, f64)> = None;
    for (i, zi) in z.iter().chain(std::iter::once(&None)).enumerate() {
        let sign = zi.filter(|z| z.abs() > cfg.k_sigma).map(f64::signum);
        match (run, sign) {
            (Some((_, s)), Some(t)) if s == t => {}
            _ => {
                if let Some((start, _)) = run.take() {
                    let len = i - start;
                    if len >= need && best.is_none_or(|(a, b)| len > b + 1 - a) {
                        best = Some((start, i - 1));
                    }
                }
                run = sign.map(|s| (i, s));
            }
        }
    }
    let Some((first, last)) = best else {
        return Ok(TransientVerdict::None);
    };
    let devs: Vec<f64> = (first..=last).map(|i| usable(tested[i]).unwrap().value - reference.value).collect();
    let min_abs_z = (first..=last).map(|i| z[i].unwrap().abs()).fold(f64::INFINITY, f64::min);
    Ok(TransientVerdict::Deviation(DeviationRun {
        observable: observable.to_string(),
        slots: SlotRange {
            first: tested[first],
            last: tested[last],
        },
        start: grid.slot_start(tested[first]),
        end: grid.slot_start(tested[last] + 1),
        magnitude: devs.iter().sum::<f64>() / devs.len() as f64,
        min_abs_z,
        reference,
    }))
}

/// Runs the detector on `S(t)` and on the headline `η(t)`; the first
/// deviation found wins. Errors only if neither observable can be tested.
pub fn detect_transient_series(
    series: &SlotSeries,
    mask: &[bool],
    in_pulse: SlotRange,
    cfg: &TransientConfig,
) -> Result<TransientVerdict, AnalysisError> {
    let eta = series.headline_eta();
    let mut first_err = None;
    let mut any_ok = false;
    for (name, values) in [("s", &series.s), ("eta", &eta)] {
        if values.is_empty() {
            continue;
        }
        match detect_transient(name, values, mask, in_pulse, &series.grid, cfg) {
            Ok(v @ TransientVerdict::Deviation(_)) => return Ok(v),
            Ok(TransientVerdict::None) => any_ok = true,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (any_ok, first_err) {
        (true, _) => Ok(TransientVerdict::None),
        (false, Some(e)) => Err(e),
        (false, None) => Err(AnalysisError::TooFewSignificant { got: 0, need: 1 }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(values: Vec<f64>, sigma: f64) -> (Vec<Option<Estimate>>, Vec<bool>, SlotGrid) {
        let grid = SlotGrid::new(4_000, 2_040_000).unwrap();
        let mut v = vec![None; grid.n_slots];
        let mut m = vec![false; grid.n_slots];
        for (i, x) in values.into_iter().enumerate() {
            v[i] = Some(Estimate::new(x, sigma));
            m[i] = true;
        }
        (v, m, grid)
    }

    const PULSE: SlotRange = SlotRange { first: 0, last: 124 };

    fn cfg() -> TransientConfig {
        TransientConfig {
            tau: 80e-9,
            k_sigma: 3.0,
        }
    }

    #[test]
    fn persistence_counts() {
        let g4 = SlotGrid::new(4_000, 2_040_000).unwrap();
        let g20 = SlotGrid::new(20_000, 2_040_000).unwrap();
        assert_eq!(cfg().persistence(&g4), 20);
        assert_eq!(cfg().persistence(&g20), 4);
        let tau24 = 24.0 / crate::model::SPEED_OF_LIGHT;
        let c = TransientConfig { tau: tau24, k_sigma: 3.0 };
        assert_eq!(c.persistence(&g4), 21);
        assert_eq!(c.persistence(&g20), 5);
    }

    #[test]
    fn flat_series_is_quiet() {
        let (v, m, g) = setup(vec![2.77; 125], 0.03);
        assert_eq!(detect_transient("s", &v, &m, PULSE, &g, &cfg()).unwrap(), TransientVerdict::None);
    }

    #[test]
    fn short_dip_is_ignored() {
        let mut x = vec![2.77; 125];
        for v in &mut x[5..8] {
            *v -= 5.0 * 0.03 * 1.2;
        }
        let (v, m, g) = setup(x, 0.03);
        assert_eq!(detect_transient("s", &v, &m, PULSE, &g, &cfg()).unwrap(), TransientVerdict::None);
    }

    #[test]
    fn long_early_dip_is_flagged() {
        let mut x = vec![2.77; 125];
        for v in &mut x[0..25] {
            *v = 2.0;
        }
        let (v, m, g) = setup(x, 0.03);
        match detect_transient("s", &v, &m, PULSE, &g, &cfg()).unwrap() {
            TransientVerdict::Deviation(d) => {
                assert_eq!(d.slots, SlotRange { first: 0, last: 24 });
                assert!(d.end <= 160e-9 + 1e-15);
                assert!((d.magnitude + 0.77).abs() < 1e-9);
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn insignificant_slot_breaks_run() {
        let mut x = vec![2.77; 125];
        for v in &mut x[0..30] {
            *v = 2.0;
        }
        let (v, mut m, g) = setup(x, 0.03);
        m[12] = false;
        // runs 0..=11 and 13..=29 are both shorter than 20
        assert_eq!(detect_transient("s", &v, &m, PULSE, &g, &cfg()).unwrap(), TransientVerdict::None);
    }

    #[test]
    fn untestable_without_significance() {
        let (v, _, g) = setup(vec![2.77; 125], 0.03);
        let m = vec![false; g.n_slots];
        assert!(matches!(
            detect_transient("s", &v, &m, PULSE, &g, &cfg()),
            Err(AnalysisError::TooFewSignificant { .. })
        ));
    }
}
