//! Coincidence matching and per-setting count tables.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SlotGrid;
use crate::model::OutcomePair;
use crate::sync::DetectionEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoincError {
    #[error("run belongs to session {got:?}, table is for session {expected:?}")]
    SessionMismatch { expected: String, got: String },
    #[error("run has no setting label")]
    Unlabeled,
    #[error("setting {setting} out of range (table has {n})")]
    SettingOutOfRange { setting: usize, n: usize },
}

/// A matched A/B detection pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    pub pulse_number: i64,
    pub outcome: OutcomePair,
    /// A's intra-pulse time, ps; this is the slot coordinate of the pair.
    pub intra_ps: u64,
    /// B minus A, ps.
    pub delta_t_ps: i64,
}

impl CoincidenceRecord {
    pub fn intra_pulse_time(&self) -> f64 {
        self.intra_ps as f64 * 1e-12
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t_ps as f64 * 1e-12
    }
}

/// Pairs detections that share a pulse number and lie within `window_ps`.
///
/// Both inputs must be sorted by `(pulse_number, intra_ps)` and use the
/// same numbering. Within a pulse the earliest unmatched detections are
/// paired first; each detection is used at most once.
pub fn match_coincidences(a: &[DetectionEvent], b: &[DetectionEvent], window_ps: u64) -> Vec<CoincidenceRecord> {
    let w = window_ps as i64;
    let mut out = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        let (ea, eb) = (&a[i], &b[j]);
        if ea.pulse_number < eb.pulse_number {
            i += 1;
            continue;
        }
        if eb.pulse_number < ea.pulse_number {
            j += 1;
            continue;
        }
        let dt = eb.intra_ps as i64 - ea.intra_ps as i64;
        if dt.abs() <= w {
            out.push(CoincidenceRecord {
                pulse_number: ea.pulse_number,
                outcome: OutcomePair::new(ea.detector, eb.detector),
                intra_ps: ea.intra_ps,
                delta_t_ps: dt,
            });
            i += 1;
            j += 1;
        } else if dt < 0 {
            j += 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Expected chance coincidences between two uncorrelated streams.
pub fn accidental_estimate(rate_a: f64, rate_b: f64, window: f64, duration: f64) -> f64 {
    rate_a * rate_b * window * duration
}

/// Outcome counts for one setting, optionally resolved per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceTable {
    pub setting_label: usize,
    /// Indexed by [`OutcomePair::index`].
    pub counts: [u64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_slot: Option<Vec<[u64; 4]>>,
}

impl CoincidenceTable {
    pub fn new(setting_label: usize, slots: Option<usize>) -> Self {
        Self {
            setting_label,
            counts: [0; 4],
            per_slot: slots.map(|n| vec![[0; 4]; n]),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Accumulates runs of one session into per-setting tables.
#[derive(Debug, Clone)]
pub struct TableBuilder {
    session_id: String,
    grid: Option<SlotGrid>,
    tables: Vec<CoincidenceTable>,
    /// Records whose A time falls past the slot grid.
    pub off_grid: u64,
}

impl TableBuilder {
    pub fn new(session_id: impl Into<String>, n_settings: usize, grid: Option<SlotGrid>) -> Self {
        Self {
            session_id: session_id.into(),
            grid,
            tables: (0..n_settings)
                .map(|s| CoincidenceTable::new(s, grid.map(|g| g.n_slots)))
                .collect(),
            off_grid: 0,
        }
    }

    pub fn add_run(&mut self, session_id: &str, setting: Option<usize>, records: &[CoincidenceRecord]) -> Result<(), CoincError> {
        if session_id != self.session_id {
            return Err(CoincError::SessionMismatch {
                expected: self.session_id.clone(),
                got: session_id.to_string(),
            });
        }
        let setting = setting.ok_or(CoincError::Unlabeled)?;
        let n = self.tables.len();
        let table = self.tables.get_mut(setting).ok_or(CoincError::SettingOutOfRange { setting, n })?;
        for r in records {
            let k = r.outcome.index();
            if let (Some(g), Some(slots)) = (self.grid, table.per_slot.as_mut()) {
                match g.index(r.intra_ps) {
                    Some(i) => slots[i][k] += 1,
                    None => {
                        self.off_grid += 1;
                        continue;
                    }
                }
            }
            table.counts[k] += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<CoincidenceTable> {
        self.tables
    }
}

/// One run's input to [`build_tables`].
pub struct RunRecords<'a> {
    pub session_id: &'a str,
    pub setting: Option<usize>,
    pub records: &'a [CoincidenceRecord],
}

/// Per-setting tables over all runs of one session.
pub fn build_tables(
    session_id: &str,
    n_settings: usize,
    grid: Option<SlotGrid>,
    runs: &[RunRecords<'_>],
) -> Result<Vec<CoincidenceTable>, CoincError> {
    let mut b = TableBuilder::new(session_id, n_settings, grid);
    for r in runs {
        b.add_run(r.session_id, r.setting, r.records)?;
    }
    Ok(b.finish())
}

/// Histogram of B − A arrival differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTHistogram {
    pub lo_ps: i64,
    pub bin_ps: i64,
    pub counts: Vec<u64>,
}

impl DeltaTHistogram {
    /// Bins covering `[−window, window]`.
    pub fn new(window_ps: u64, bin_ps: u64) -> Self {
        let bin = bin_ps.max(1) as i64;
        let half = (window_ps as i64).div_euclid(bin) + 1;
        Self {
            lo_ps: -half * bin,
            bin_ps: bin,
            counts: vec![0; 2 * half as usize],
        }
    }

    pub fn add(&mut self, records: &[CoincidenceRecord]) {
        for r in records {
            let i = (r.delta_t_ps - self.lo_ps).div_euclid(self.bin_ps);
            if let Some(c) = usize::try_from(i).ok().and_then(|i| self.counts.get_mut(i)) {
                *c += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Mean and standard deviation from bin centers, ps.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.total() as f64;
        if n == 0.0 {
            return (0.0, 0.0);
        }
        let center = |i: usize| self.lo_ps as f64 + (i as f64 + 0.5) * self.bin_ps as f64;
        let mean = self.counts.iter().enumerate().map(|(i, &c)| c as f64 * center(i)).sum::<f64>() / n;
        let var = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (center(i) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    /// `bin_start_ps,bin_end_ps,count` rows.
    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["bin_start_ps", "bin_end_ps", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lo_ps + i as i64 * self.bin_ps;
            w.write_record([lo.to_string(), (lo + self.bin_ps).to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcome::{self, Minus, Plus};
    use crate::Station;
    use proptest::prelude::*;

    fn ev(station: Station, pulse: i64, intra_ns: f64, d: Outcome) -> DetectionEvent {
        DetectionEvent {
            station,
            detector: d,
            pulse_number: pulse,
            intra_ps: (intra_ns * 1000.0).round() as u64,
            wall_ps: 0,
        }
    }

    #[test]
    fn basic_examples() {
        let a = [ev(Station::A, 7, 100.0, Plus)];
        let r = match_coincidences(&a, &[ev(Station::B, 7, 101.0, Minus)], 4_000);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].outcome, OutcomePair::new(Plus, Minus));
        assert_eq!(r[0].delta_t_ps, 1_000);
        assert!(match_coincidences(&a, &[ev(Station::B, 8, 100.0, Plus)], 4_000).is_empty());
        assert!(match_coincidences(&a, &[ev(Station::B, 7, 105.0, Plus)], 4_000).is_empty());
        // the window edge is inclusive
        assert_eq!(match_coincidences(&a, &[ev(Station::B, 7, 104.0, Plus)], 4_000).len(), 1);
    }

    #[test]
    fn multi_pair_pulse() {
        let a = [ev(Station::A, 1, 10.0, Plus), ev(Station::A, 1, 200.0, Minus)];
        let b = [
            ev(Station::B, 1, 11.0, Plus),
            ev(Station::B, 1, 12.0, Minus),
            ev(Station::B, 1, 199.0, Minus),
        ];
        let r = match_coincidences(&a, &b, 4_000);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].delta_t_ps, 1_000);
        assert_eq!(r[1].outcome, OutcomePair::new(Minus, Minus));
    }

    #[test]
    fn accidentals() {
        assert!((accidental_estimate(200.0, 200.0, 4e-9, 30.0) - 4.8e-3).abs() < 1e-15);
        assert_eq!(accidental_estimate(0.0, 1e6, 4e-9, 30.0), 0.0);
        assert!((accidental_estimate(1000.0, 1000.0, 1e-9, 1.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn tables() {
        let rec = CoincidenceRecord {
            pulse_number: 0,
            outcome: OutcomePair::new(Plus, Plus),
            intra_ps: 5_000,
            delta_t_ps: 0,
        };
        let grid = SlotGrid::new(4_000, 2_040_000).unwrap();
        let t = build_tables(
            "s1",
            4,
            Some(grid),
            &[RunRecords {
                session_id: "s1",
                setting: Some(0),
                records: &[rec],
            }],
        )
        .unwrap();
        assert_eq!(t[0].counts, [1, 0, 0, 0]);
        assert_eq!(t[0].per_slot.as_ref().unwrap()[1], [1, 0, 0, 0]);
        assert_eq!(t[1].total(), 0);

        let mut b = TableBuilder::new("s1", 4, None);
        assert!(matches!(b.add_run("s2", Some(0), &[rec]), Err(CoincError::SessionMismatch { .. })));
        assert_eq!(b.add_run("s1", None, &[rec]), Err(CoincError::Unlabeled));
        assert!(b.add_run("s1", Some(9), &[rec]).is_err());

        let recs = vec![rec; 10];
        for s in 0..4 {
            b.add_run("s1", Some(s), &recs).unwrap();
        }
        assert!(b.finish().iter().all(|t| t.total() == 10));
    }

    #[test]
    fn histogram() {
        let mut h = DeltaTHistogram::new(4_000, 100);
        let mk = |dt| CoincidenceRecord {
            pulse_number: 0,
            outcome: OutcomePair::new(Plus, Plus),
            intra_ps: 0,
            delta_t_ps: dt,
        };
        h.add(&[mk(-4_000), mk(0), mk(4_000), mk(50)]);
        assert_eq!(h.total(), 4);
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("bin_start_ps,bin_end_ps,count\n-4100,"));
    }

    fn events(station: Station) -> impl Strategy<Value = Vec<DetectionEvent>> {
        prop::collection::vec((0i64..20, 0u64..40_000, any::<bool>()), 0..60).prop_map(move |v| {
            let mut e: Vec<DetectionEvent> = v
                .into_iter()
                .map(|(p, t, d)| DetectionEvent {
                    station,
                    detector: if d { Plus } else { Minus },
                    pulse_number: p,
                    intra_ps: t,
                    wall_ps: 0,
                })
                .collect();
            e.sort_by_key(|e| (e.pulse_number, e.intra_ps));
            e
        })
    }

    proptest! {
        #[test]
        fn symmetric_under_exchange(a in events(Station::A), b in events(Station::B)) {
            let ab = match_coincidences(&a, &b, 4_000);
            let ba = match_coincidences(&b, &a, 4_000);
            prop_assert_eq!(ab.len(), ba.len());
            let mut x: Vec<(i64, i64)> = ab.iter().map(|r| (r.pulse_number, r.delta_t_ps)).collect();
            let mut y: Vec<(i64, i64)> = ba.iter().map(|r| (r.pulse_number, -r.delta_t_ps)).collect();
            x.sort();
            y.sort();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn bounded_by_per_pulse_minimum(a in events(Station::A), b in events(Station::B)) {
            let r = match_coincidences(&a, &b, 4_000);
            for p in 0..20 {
                let na = a.iter().filter(|e| e.pulse_number == p).count();
                let nb = b.iter().filter(|e| e.pulse_number == p).count();
                let nr = r.iter().filter(|e| e.pulse_number == p).count();
                prop_assert!(nr <= na.min(nb));
                prop_assert!(r.iter().all(|e| e.delta_t_ps.abs() <= 4_000));
            }
        }
    }
}
