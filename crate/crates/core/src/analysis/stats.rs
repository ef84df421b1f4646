use serde::{Deserialize, Serialize};

use crate::model::CHSH_SIGNS;

/// A value with its one-sigma statistical error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }
}

/// `E = (N++ + N−− − N+− − N−+)/N` with `σ = √((1 − E²)/N)`.
///
/// Counts are in [`crate::OutcomePair::ALL`] order. `None` for an empty table.
pub fn correlator(counts: [u64; 4]) -> Option<Estimate> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return None;
    }
    let e = (counts[0] as f64 + counts[3] as f64 - counts[1] as f64 - counts[2] as f64) / n as f64;
    Some(Estimate::new(e, ((1.0 - e * e).max(0.0) / n as f64).sqrt()))
}

/// `|E0 − E1 + E2 + E3|`, errors in quadrature. Undefined if any E is.
pub fn chsh(e: [Option<Estimate>; 4]) -> Option<Estimate> {
    let mut s = 0.0;
    let mut var = 0.0;
    for (x, sign) in e.iter().zip(CHSH_SIGNS) {
        let x = (*x)?;
        s += sign * x.value;
        var += x.sigma * x.sigma;
    }
    Some(Estimate::new(s.abs(), var.sqrt()))
}

/// Coincidences over singles with a binomial error.
pub fn efficiency(coincidences: u64, singles: u64) -> Option<Estimate> {
    if singles == 0 {
        return None;
    }
    let n = singles as f64;
    let eta = coincidences as f64 / n;
    Some(Estimate::new(eta, (eta * (1.0 - eta)).max(0.0).sqrt() / n.sqrt()))
}

/// `S·η` with first-order error propagation.
pub fn product(s: Option<Estimate>, eta: Option<Estimate>) -> Option<Estimate> {
    let (s, eta) = (s?, eta?);
    Some(Estimate::new(
        s.value * eta.value,
        ((eta.value * s.sigma).powi(2) + (s.value * eta.sigma).powi(2)).sqrt(),
    ))
}

/// Per-slot S from per-setting correlator series.
pub fn chsh_series(e: &[Vec<Option<Estimate>>]) -> Vec<Option<Estimate>> {
    assert_eq!(e.len(), 4, "CHSH needs exactly four settings");
    (0..e[0].len()).map(|i| chsh([e[0][i], e[1][i], e[2][i], e[3][i]])).collect()
}

pub fn efficiency_series(coincidences: &[u64], singles: &[u64]) -> Vec<Option<Estimate>> {
    coincidences.iter().zip(singles).map(|(&c, &s)| efficiency(c, s)).collect()
}

pub fn product_series(s: &[Option<Estimate>], eta: &[Option<Estimate>]) -> Vec<Option<Estimate>> {
    s.iter().zip(eta).map(|(&s, &e)| product(s, e)).collect()
}

/// Mean and sample standard deviation of the defined values.
pub fn mean_and_sd(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd, v.len()))
}

/// Inverse-variance weighted mean; values with zero sigma are skipped.
pub fn weighted_mean(values: impl IntoIterator<Item = Estimate>) -> Option<Estimate> {
    let (mut sw, mut swx) = (0.0, 0.0);
    for e in values {
        if e.sigma > 0.0 && e.sigma.is_finite() {
            let w = 1.0 / (e.sigma * e.sigma);
            sw += w;
            swx += w * e.value;
        }
    }
    (sw > 0.0).then(|| Estimate::new(swx / sw, 1.0 / sw.sqrt()))
}

/// χ² against the weighted mean divided by `n − 1`, with `n − 1`.
pub fn reduced_chi2(values: &[Estimate]) -> Option<(f64, usize)> {
    let used: Vec<Estimate> = values.iter().copied().filter(|e| e.sigma > 0.0).collect();
    if used.len() < 2 {
        return None;
    }
    let m = weighted_mean(used.iter().copied())?.value;
    let chi2: f64 = used.iter().map(|e| ((e.value - m) / e.sigma).powi(2)).sum();
    let dof = used.len() - 1;
    Some((chi2 / dof as f64, dof))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{qm_joint_prob, OutcomePair, QmStateModel, SettingsQuad};
    use proptest::prelude::*;

    #[test]
    fn correlator_examples() {
        assert_eq!(correlator([50, 0, 0, 50]), Some(Estimate::new(1.0, 0.0)));
        let e = correlator([25, 25, 25, 25]).unwrap();
        assert_eq!(e.value, 0.0);
        assert!((e.sigma - 0.1).abs() < 1e-15);
        // N++ = N−− = 427, N+− = N−+ = 73
        let e = correlator([427, 73, 73, 427]).unwrap();
        assert!((e.value - 0.708).abs() < 1e-12);
        assert!(correlator([0; 4]).is_none());
    }

    fn ideal_counts(v: f64, n: f64) -> Vec<[u64; 4]> {
        let model = QmStateModel::new(v).unwrap();
        SettingsQuad::default()
            .settings()
            .iter()
            .map(|&s| OutcomePair::ALL.map(|p| (qm_joint_prob(p, s, &model) * n).round() as u64))
            .collect()
    }

    #[test]
    fn chsh_from_ideal_counts() {
        let s = |v| {
            let c = ideal_counts(v, 1e12);
            chsh([correlator(c[0]), correlator(c[1]), correlator(c[2]), correlator(c[3])]).unwrap().value
        };
        assert!((s(1.0) - 2.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!((s(0.980198) - 2.7724).abs() < 1e-4);
        assert!(chsh([None, correlator([1, 0, 0, 1]), None, None]).is_none());
    }

    #[test]
    fn efficiency_and_product() {
        assert!((efficiency(104, 1000).unwrap().value - 0.104).abs() < 1e-15);
        assert_eq!(efficiency(0, 1000).unwrap().value, 0.0);
        assert!(efficiency(0, 0).is_none());
        let p = product(Some(Estimate::new(2.77, 0.0)), Some(Estimate::new(0.1, 0.0))).unwrap();
        assert!((p.value - 0.277).abs() < 1e-12);
        let p = product(Some(Estimate::new(2.0 * 2f64.sqrt(), 0.0)), Some(Estimate::new(1.0, 0.0))).unwrap();
        assert!(p.value > 2.0);
        assert!(product(None, Some(Estimate::new(1.0, 0.0))).is_none());
        let p = product(Some(Estimate::new(2.0, 0.1)), Some(Estimate::new(0.1, 0.01))).unwrap();
        assert!((p.sigma - (0.01f64.powi(2) + 0.02f64.powi(2)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn chi2_of_consistent_values() {
        let v: Vec<Estimate> = [1.0, 1.2, 0.8].iter().map(|&x| Estimate::new(x, 0.2)).collect();
        let (r, dof) = reduced_chi2(&v).unwrap();
        assert_eq!(dof, 2);
        assert!((r - 1.0).abs() < 1e-12);
        let (m, sd, n) = mean_and_sd([2.7, 2.7, 2.7]).unwrap();
        assert_eq!(n, 3);
        assert!((m - 2.7).abs() < 1e-12 && sd < 1e-12);
    }

    proptest! {
        #[test]
        fn bounds(c in prop::array::uniform4(0u64..1000), d in prop::array::uniform4(0u64..1000),
                  f in prop::array::uniform4(0u64..1000), g in prop::array::uniform4(0u64..1000)) {
            let es = [correlator(c), correlator(d), correlator(f), correlator(g)];
            for e in es.iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&e.value));
            }
            if let Some(s) = chsh(es) {
                prop_assert!((0.0..=4.0).contains(&s.value));
            }
        }
    }
}
