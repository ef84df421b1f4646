//! Stroboscopic reconstruction: per-slot counts, correlators, `S(t)`,
//! `η(t)`, their product, plateau statistics and the transient detector.

mod scan;
mod stats;
mod transient;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scan::{angle_scan_curves, FringeFit, ScanCurves, ScanPoint};
pub use stats::{
    chsh, chsh_series, correlator, efficiency, efficiency_series, mean_and_sd, product, product_series, reduced_chi2,
    weighted_mean, Estimate,
};
pub use transient::{detect_transient, detect_transient_series, DeviationRun, TransientConfig, TransientVerdict};

use crate::coinc::CoincidenceRecord;
use crate::grid::{GridError, SlotGrid};
use crate::model::Outcome;
use crate::sync::DetectionEvent;
use crate::Station;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("no in-pulse slots found")]
    EmptyPulse,
    #[error("only {got} significant slots available to test, need {need}")]
    TooFewSignificant { got: usize, need: usize },
    #[error("angle-scan fit failed: {0}")]
    FitFailed(&'static str),
    #[error("expected {expected} settings, got {got}")]
    SettingCount { expected: usize, got: usize },
}

/// One of the four detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Detector {
    #[default]
    #[serde(rename = "A+")]
    APlus,
    #[serde(rename = "A-")]
    AMinus,
    #[serde(rename = "B+")]
    BPlus,
    #[serde(rename = "B-")]
    BMinus,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::APlus, Detector::AMinus, Detector::BPlus, Detector::BMinus];

    pub fn new(station: Station, outcome: Outcome) -> Self {
        match (station, outcome) {
            (Station::A, Outcome::Plus) => Detector::APlus,
            (Station::A, Outcome::Minus) => Detector::AMinus,
            (Station::B, Outcome::Plus) => Detector::BPlus,
            (Station::B, Outcome::Minus) => Detector::BMinus,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        ["A+", "A-", "B+", "B-"][self.index()]
    }

    /// Outcome-table indices of the coincidences this detector takes part in.
    pub fn outcome_indices(self) -> [usize; 2] {
        // OutcomePair::ALL is ++, +-, -+, --
        match self {
            Detector::APlus => [0, 1],
            Detector::AMinus => [2, 3],
            Detector::BPlus => [0, 2],
            Detector::BMinus => [1, 3],
        }
    }
}

/// Session counts on the intra-pulse slot grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotCounts {
    pub grid: SlotGrid,
    /// `[slot][detector]`.
    pub singles: Vec<[u64; 4]>,
    /// `[setting][slot][outcome]`.
    pub coinc: Vec<Vec<[u64; 4]>>,
    /// Events or records that fell past the end of the grid.
    pub off_grid: u64,
}

impl SlotCounts {
    pub fn new(grid: SlotGrid, n_settings: usize) -> Self {
        Self {
            grid,
            singles: vec![[0; 4]; grid.n_slots],
            coinc: vec![vec![[0; 4]; grid.n_slots]; n_settings],
            off_grid: 0,
        }
    }

    pub fn n_settings(&self) -> usize {
        self.coinc.len()
    }

    /// Accumulates one run taken at `setting`.
    pub fn add_run(&mut self, setting: usize, a: &[DetectionEvent], b: &[DetectionEvent], records: &[CoincidenceRecord]) {
        for e in a.iter().chain(b) {
            match self.grid.index(e.intra_ps) {
                Some(i) => self.singles[i][Detector::new(e.station, e.detector).index()] += 1,
                None => self.off_grid += 1,
            }
        }
        let table = &mut self.coinc[setting];
        for r in records {
            match self.grid.index(r.intra_ps) {
                Some(i) => table[i][r.outcome.index()] += 1,
                None => self.off_grid += 1,
            }
        }
    }

    /// Associative merge of two partial sums over the same grid.
    pub fn merge(&mut self, other: &SlotCounts) {
        assert_eq!(self.grid, other.grid);
        assert_eq!(self.coinc.len(), other.coinc.len());
        for (x, y) in self.singles.iter_mut().zip(&other.singles) {
            for d in 0..4 {
                x[d] += y[d];
            }
        }
        for (tx, ty) in self.coinc.iter_mut().zip(&other.coinc) {
            for (x, y) in tx.iter_mut().zip(ty) {
                for k in 0..4 {
                    x[k] += y[k];
                }
            }
        }
        self.off_grid += other.off_grid;
    }

    /// Unresolved per-setting outcome totals.
    pub fn setting_totals(&self) -> Vec<[u64; 4]> {
        self.coinc
            .iter()
            .map(|t| {
                t.iter().fold([0; 4], |mut acc, c| {
                    for k in 0..4 {
                        acc[k] += c[k];
                    }
                    acc
                })
            })
            .collect()
    }

    pub fn singles_totals(&self) -> [u64; 4] {
        self.singles.iter().fold([0; 4], |mut acc, c| {
            for k in 0..4 {
                acc[k] += c[k];
            }
            acc
        })
    }

    /// Singles per slot summed over detectors.
    pub fn slot_singles(&self) -> Vec<u64> {
        self.singles.iter().map(|s| s.iter().sum()).collect()
    }

    /// Coincidences involving `d` per slot, summed over settings.
    pub fn detector_coincidences(&self, d: Detector) -> Vec<u64> {
        let [i, j] = d.outcome_indices();
        (0..self.grid.n_slots)
            .map(|s| self.coinc.iter().map(|t| t[s][i] + t[s][j]).sum())
            .collect()
    }

    /// Fewest coincidences of any setting in each slot.
    pub fn min_setting_coincidences(&self) -> Vec<u64> {
        (0..self.grid.n_slots)
            .map(|s| self.coinc.iter().map(|t| t[s].iter().sum::<u64>()).min().unwrap_or(0))
            .collect()
    }
}

/// Slot counts for one run: singles from both stations, coincidences by
/// A's intra-pulse time.
pub fn bin_slots(
    a: &[DetectionEvent],
    b: &[DetectionEvent],
    records: &[CoincidenceRecord],
    setting: usize,
    n_settings: usize,
    slot_ps: u64,
    period_ps: u64,
) -> Result<SlotCounts, AnalysisError> {
    let mut c = SlotCounts::new(SlotGrid::new(slot_ps, period_ps)?, n_settings);
    c.add_run(setting, a, b, records);
    Ok(c)
}

/// Slot passes iff every setting holds at least `min_coincidences` there.
pub fn significance_mask(counts: &SlotCounts, min_coincidences: u64) -> Vec<bool> {
    counts
        .min_setting_coincidences()
        .into_iter()
        .map(|n| n >= min_coincidences)
        .collect()
}

/// Inclusive slot range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRange {
    pub first: usize,
    pub last: usize,
}

impl SlotRange {
    pub fn contains(&self, i: usize) -> bool {
        (self.first..=self.last).contains(&i)
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Longest contiguous run of slots whose singles exceed
/// `max(10 × median, 0.05 × max)`.
///
/// The median is the off-pulse level as long as the duty cycle is below
/// one half; the second term keeps the rule sane without dark counts.
pub fn in_pulse_range(counts: &SlotCounts) -> Option<SlotRange> {
    let s = counts.slot_singles();
    let mut sorted = s.clone();
    sorted.sort_unstable();
    let median = *sorted.get(sorted.len() / 2)?;
    let max = *sorted.last()?;
    let thr = (10.0 * median as f64).max(0.05 * max as f64);
    let mut best: Option<SlotRange> = None;
    let mut start = None;
    for (i, &x) in s.iter().chain(std::iter::once(&0)).enumerate() {
        if x as f64 > thr && i < s.len() {
            start.get_or_insert(i);
        } else if let Some(f) = start.take() {
            let r = SlotRange { first: f, last: i - 1 };
            if best.is_none_or(|b| r.len() > b.len()) {
                best = Some(r);
            }
        }
    }
    best
}

/// All per-slot observables of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSeries {
    pub grid: SlotGrid,
    pub headline: Detector,
    /// `[setting][slot]`.
    pub e: Vec<Vec<Option<Estimate>>>,
    /// Empty unless the session has exactly four settings.
    pub s: Vec<Option<Estimate>>,
    /// `[slot][detector]`.
    pub eta: Vec<[Option<Estimate>; 4]>,
    /// `S × η` of the headline detector.
    pub product: Vec<Option<Estimate>>,
    pub counts: SlotCounts,
}

impl SlotSeries {
    pub fn from_counts(counts: SlotCounts, headline: Detector) -> Self {
        let e: Vec<Vec<Option<Estimate>>> = counts
            .coinc
            .iter()
            .map(|t| t.iter().map(|&c| correlator(c)).collect())
            .collect();
        let s = if e.len() == 4 { chsh_series(&e) } else { Vec::new() };
        let per_det: Vec<Vec<Option<Estimate>>> = Detector::ALL
            .iter()
            .map(|&d| {
                let singles: Vec<u64> = counts.singles.iter().map(|x| x[d.index()]).collect();
                efficiency_series(&counts.detector_coincidences(d), &singles)
            })
            .collect();
        let eta: Vec<[Option<Estimate>; 4]> = (0..counts.grid.n_slots)
            .map(|i| [per_det[0][i], per_det[1][i], per_det[2][i], per_det[3][i]])
            .collect();
        let head: Vec<Option<Estimate>> = eta.iter().map(|x| x[headline.index()]).collect();
        let product = if s.is_empty() { Vec::new() } else { product_series(&s, &head) };
        Self {
            grid: counts.grid,
            headline,
            e,
            s,
            eta,
            product,
            counts,
        }
    }

    pub fn headline_eta(&self) -> Vec<Option<Estimate>> {
        self.eta.iter().map(|x| x[self.headline.index()]).collect()
    }

    /// S from the unresolved tables.
    pub fn all_data_s(&self) -> Option<Estimate> {
        let t = self.counts.setting_totals();
        if t.len() != 4 {
            return None;
        }
        chsh([correlator(t[0]), correlator(t[1]), correlator(t[2]), correlator(t[3])])
    }

    /// η of `d` from all singles and coincidences, in or out of the pulse.
    pub fn all_data_eta(&self, d: Detector) -> Option<Estimate> {
        let c: u64 = self.counts.detector_coincidences(d).iter().sum();
        efficiency(c, self.counts.singles_totals()[d.index()])
    }

    /// One row per slot; see `docs/schemas.md` for the columns.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let ns = self.counts.n_settings();
        let mut header: Vec<String> = vec!["slot".into(), "t_start_ns".into()];
        for d in Detector::ALL {
            header.push(format!("singles_{}", d.label()));
        }
        for k in 0..ns {
            for p in crate::model::OutcomePair::ALL {
                header.push(format!("n{k}_{}", p.label()));
            }
            header.push(format!("e{k}"));
            header.push(format!("e{k}_sigma"));
        }
        header.extend(["s", "s_sigma"].map(String::from));
        for d in Detector::ALL {
            header.push(format!("eta_{}", d.label()));
            header.push(format!("eta_{}_sigma", d.label()));
        }
        header.extend(["s_times_eta", "s_times_eta_sigma"].map(String::from));
        w.write_record(&header)?;

        let fmt = |x: Option<Estimate>| match x {
            Some(e) => [format!("{:.6}", e.value), format!("{:.6}", e.sigma)],
            None => [String::new(), String::new()],
        };
        for i in 0..self.grid.n_slots {
            let mut row: Vec<String> = vec![i.to_string(), format!("{:.3}", self.grid.slot_start(i) * 1e9)];
            row.extend(self.counts.singles[i].iter().map(|c| c.to_string()));
            for k in 0..ns {
                row.extend(self.counts.coinc[k][i].iter().map(|c| c.to_string()));
                row.extend(fmt(self.e[k][i]));
            }
            row.extend(fmt(self.s.get(i).copied().flatten()));
            for d in 0..4 {
                row.extend(fmt(self.eta[i][d]));
            }
            row.extend(fmt(self.product.get(i).copied().flatten()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Time-averaged versus all-data summaries over the in-pulse slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSummary {
    pub in_pulse: SlotRange,
    pub in_pulse_start: f64,
    pub in_pulse_end: f64,
    pub time_avg_s: Option<f64>,
    /// Sample standard deviation over the in-pulse slots.
    pub time_dispersion_s: Option<f64>,
    pub n_slots_s: usize,
    pub all_data_s: Option<Estimate>,
    /// S from the in-pulse slots' tables summed.
    pub in_pulse_s: Option<Estimate>,
    /// |time average − all data| < 2σ(all data).
    pub s_consistent: Option<bool>,
    /// χ² against a constant over significant in-pulse slots.
    pub reduced_chi2_s: Option<f64>,
    pub chi2_dof: usize,
    pub headline: Detector,
    pub time_avg_eta: Option<f64>,
    pub time_dispersion_eta: Option<f64>,
    pub all_data_eta: Option<Estimate>,
    pub in_pulse_eta: Option<Estimate>,
    pub time_avg_product: Option<f64>,
    pub max_product: Option<Estimate>,
}

pub fn plateau_summary(series: &SlotSeries, mask: &[bool]) -> Result<PlateauSummary, AnalysisError> {
    let range = in_pulse_range(&series.counts).ok_or(AnalysisError::EmptyPulse)?;
    let in_range = |v: &[Option<Estimate>]| -> Vec<Estimate> {
        (range.first..=range.last).filter_map(|i| v.get(i).copied().flatten()).collect()
    };
    let s_vals = in_range(&series.s);
    let s_stats = mean_and_sd(s_vals.iter().map(|e| e.value));
    let eta = series.headline_eta();
    let eta_stats = mean_and_sd(in_range(&eta).iter().map(|e| e.value));
    let prod_stats = mean_and_sd(in_range(&series.product).iter().map(|e| e.value));
    let significant: Vec<Estimate> = (range.first..=range.last)
        .filter(|&i| mask.get(i).copied().unwrap_or(false))
        .filter_map(|i| series.s.get(i).copied().flatten())
        .collect();
    let chi2 = reduced_chi2(&significant);
    let all_s = series.all_data_s();
    let s_consistent = match (s_stats, all_s) {
        (Some((m, _, _)), Some(a)) => Some((m - a.value).abs() < 2.0 * a.sigma),
        _ => None,
    };
    let max_product = series
        .product
        .iter()
        .flatten()
        .copied()
        .fold(None, |acc: Option<Estimate>, e| match acc {
            Some(a) if a.value >= e.value => Some(a),
            _ => Some(e),
        });
    let in_pulse_s = if series.counts.n_settings() == 4 {
        let t: Vec<[u64; 4]> = series
            .counts
            .coinc
            .iter()
            .map(|tab| {
                tab[range.first..=range.last].iter().fold([0; 4], |mut acc, c| {
                    for k in 0..4 {
                        acc[k] += c[k];
                    }
                    acc
                })
            })
            .collect();
        chsh([correlator(t[0]), correlator(t[1]), correlator(t[2]), correlator(t[3])])
    } else {
        None
    };
    let h = series.headline;
    let in_pulse_eta = efficiency(
        series.counts.detector_coincidences(h)[range.first..=range.last].iter().sum(),
        series.counts.singles[range.first..=range.last].iter().map(|s| s[h.index()]).sum(),
    );
    Ok(PlateauSummary {
        in_pulse: range,
        in_pulse_s,
        in_pulse_eta,
        in_pulse_start: series.grid.slot_start(range.first),
        in_pulse_end: series.grid.slot_start(range.last + 1),
        time_avg_s: s_stats.map(|x| x.0),
        time_dispersion_s: s_stats.map(|x| x.1),
        n_slots_s: s_stats.map_or(0, |x| x.2),
        all_data_s: all_s,
        s_consistent,
        reduced_chi2_s: chi2.map(|x| x.0),
        chi2_dof: chi2.map_or(0, |x| x.1),
        headline: series.headline,
        time_avg_eta: eta_stats.map(|x| x.0),
        time_dispersion_eta: eta_stats.map(|x| x.1),
        all_data_eta: series.all_data_eta(series.headline),
        time_avg_product: prod_stats.map(|x| x.0),
        max_product,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OutcomePair;

    fn ev(station: Station, intra_ps: u64) -> DetectionEvent {
        DetectionEvent {
            station,
            detector: Outcome::Plus,
            pulse_number: 0,
            intra_ps,
            wall_ps: 0,
        }
    }

    #[test]
    fn slot_assignment() {
        let a = [ev(Station::A, 0), ev(Station::A, 123_000)];
        let c = bin_slots(&a, &[], &[], 0, 4, 4_000, 2_000_000).unwrap();
        assert_eq!(c.singles[0][0], 1);
        assert_eq!(c.singles[30][0], 1);
        assert!(bin_slots(&a, &[], &[], 0, 4, 3_000, 2_000_000).is_err());
    }

    #[test]
    fn uniform_pulse_occupies_first_quarter() {
        // 125 000 events spread evenly over 500 ns, no darks
        let a: Vec<DetectionEvent> = (0..125_000u64).map(|k| ev(Station::A, k * 4)).collect();
        let c = bin_slots(&a, &[], &[], 0, 4, 4_000, 2_000_000).unwrap();
        let s = c.slot_singles();
        assert!(s[..125].iter().all(|&x| x == 1000));
        assert!(s[125..].iter().all(|&x| x == 0));
        assert_eq!(in_pulse_range(&c), Some(SlotRange { first: 0, last: 124 }));
    }

    #[test]
    fn sum_rule_and_mask() {
        let grid = SlotGrid::new(4_000, 2_000_000).unwrap();
        let mut c = SlotCounts::new(grid, 4);
        let rec = |t: u64, o: usize| CoincidenceRecord {
            pulse_number: 0,
            outcome: OutcomePair::ALL[o],
            intra_ps: t,
            delta_t_ps: 0,
        };
        let recs: Vec<CoincidenceRecord> = (0..5000u64).map(|k| rec(k * 97 % 2_000_000, (k % 4) as usize)).collect();
        for s in 0..4 {
            c.add_run(s, &[], &[], &recs[..1200 - s]);
        }
        let totals = c.setting_totals();
        for (s, t) in totals.iter().enumerate() {
            assert_eq!(t.iter().sum::<u64>(), 1200 - s as u64);
        }
        let mut grid2 = SlotCounts::new(grid, 4);
        grid2.merge(&c);
        assert_eq!(grid2, c);
        // dense single slot
        let mut d = SlotCounts::new(grid, 4);
        for s in 0..4 {
            d.add_run(s, &[], &[], &vec![rec(10, 0); 1200 - 201 * (s == 2) as usize]);
        }
        let m = significance_mask(&d, 1000);
        assert!(!m[0]);
        let mut e = SlotCounts::new(grid, 4);
        for s in 0..4 {
            e.add_run(s, &[], &[], &vec![rec(10, 0); 1200]);
        }
        assert!(significance_mask(&e, 1000)[0]);
    }

    #[test]
    fn constant_plateau() {
        // every in-pulse slot carries E = ±1/√2-ish tables giving the same S
        let grid = SlotGrid::new(20_000, 2_040_000).unwrap();
        let mut c = SlotCounts::new(grid, 4);
        let table = [[427u64, 73, 73, 427], [73, 427, 427, 73], [427, 73, 73, 427], [427, 73, 73, 427]];
        for i in 0..25 {
            for (s, t) in table.iter().enumerate() {
                c.coinc[s][i] = *t;
            }
            c.singles[i] = [10_000; 4];
        }
        let series = SlotSeries::from_counts(c, Detector::APlus);
        let mask = significance_mask(&series.counts, 1000);
        let p = plateau_summary(&series, &mask).unwrap();
        assert_eq!(p.in_pulse, SlotRange { first: 0, last: 24 });
        assert!((p.time_avg_s.unwrap() - 4.0 * 0.708).abs() < 1e-12);
        assert_eq!(p.time_dispersion_s, Some(0.0));
        assert_eq!(p.s_consistent, Some(true));
        assert!(p.reduced_chi2_s.unwrap() < 1e-20);
        assert!((p.time_avg_eta.unwrap() - 0.2).abs() < 1e-12);
    }
}
