//! Pulse numbering and clock relation from the two trigger channels.
//!
//! The repetition-rate modulation makes each station's inter-trigger
//! intervals a (stretched) copy of the same binary sequence. Binarizing
//! both interval series and cross-correlating them gives the pulse offset
//! between the stations without looking at a single photon; an affine fit
//! over the matched triggers then gives the clock relation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Outcome;
use crate::sim::PulsePlan;
use crate::{Station, TimeTag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("need at least {need} triggers, got {got}")]
    TooFewTriggers { need: usize, got: usize },
    #[error("no repetition-rate modulation found in the trigger intervals")]
    PatternAbsent,
    #[error("trigger series overlap of {got} intervals is below the required {need}")]
    InsufficientOverlap { got: usize, need: usize },
    #[error("ambiguous alignment: peak {peak:.3} at lag {lag}, runner-up {second:.3}")]
    Ambiguous { lag: i64, peak: f64, second: f64 },
    #[error("only {0} matched trigger pairs, need 10")]
    TooFewPairs(usize),
    #[error("fitted rate ratio {0} is not within 1e-3 of 1")]
    RateOutOfRange(f64),
}

/// Consecutive trigger differences, picoseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodSeries {
    pub intervals: Vec<u64>,
    /// Pulse index of the first interval.
    pub start_index: usize,
}

impl PeriodSeries {
    pub fn from_times(triggers: &[u64]) -> Result<Self, SyncError> {
        if triggers.len() < 2 {
            return Err(SyncError::TooFewTriggers {
                need: 2,
                got: triggers.len(),
            });
        }
        Ok(Self {
            intervals: triggers.windows(2).map(|w| w[1].saturating_sub(w[0])).collect(),
            start_index: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Interval series of the trigger channel in `tags`.
pub fn extract_period_series(tags: &[TimeTag]) -> Result<PeriodSeries, SyncError> {
    PeriodSeries::from_times(&crate::trigger_times(tags))
}

/// Splits intervals into long (1) and short (0).
///
/// The threshold is the midpoint of the 5th and 95th percentiles, which
/// sits between the two period clusters whatever their relative weight.
/// Errors if the two clusters are not separated by at least four
/// within-cluster standard deviations.
pub fn binarize(series: &PeriodSeries) -> Result<Vec<bool>, SyncError> {
    let n = series.len();
    if n == 0 {
        return Err(SyncError::PatternAbsent);
    }
    let mut sorted = series.intervals.clone();
    sorted.sort_unstable();
    let lo = sorted[(n - 1) * 5 / 100];
    let hi = sorted[(n - 1) * 95 / 100];
    if hi == lo {
        return Err(SyncError::PatternAbsent);
    }
    let threshold = (lo as f64 + hi as f64) / 2.0;
    let bits: Vec<bool> = series.intervals.iter().map(|&x| x as f64 > threshold).collect();

    let mut stats = [(0f64, 0f64, 0f64); 2];
    for (&x, &b) in series.intervals.iter().zip(&bits) {
        let s = &mut stats[b as usize];
        s.0 += 1.0;
        s.1 += x as f64;
        s.2 += (x as f64) * (x as f64);
    }
    if stats.iter().any(|s| s.0 < 2.0) {
        return Err(SyncError::PatternAbsent);
    }
    let mean_sd = |s: (f64, f64, f64)| {
        let m = s.1 / s.0;
        (m, ((s.2 / s.0 - m * m).max(0.0) * s.0 / (s.0 - 1.0)).sqrt())
    };
    let (m0, sd0) = mean_sd(stats[0]);
    let (m1, sd1) = mean_sd(stats[1]);
    if m1 - m0 < 4.0 * sd0.max(sd1) {
        return Err(SyncError::PatternAbsent);
    }
    Ok(bits)
}

/// Parameters of the lag search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Lags searched: `−max_lag ..= max_lag`.
    pub max_lag: usize,
    /// Leading B intervals used for the correlation.
    pub window: usize,
    /// Minimum number of compared intervals at any tested lag.
    pub min_overlap: usize,
    /// Half-width of the main lobe excluded when looking for the runner-up.
    pub lobe: usize,
    pub min_peak: f64,
    pub min_ratio: f64,
}

impl AlignConfig {
    /// Search covering half a pattern repetition either way, so the answer is
    /// unique modulo the pattern length.
    pub fn for_plan(plan: &PulsePlan) -> Self {
        let len = plan.fm_pattern.pattern_length().unwrap_or(1000);
        Self {
            max_lag: len / 2,
            window: 4 * len,
            min_overlap: len,
            lobe: plan.fm_pattern.bit_span(),
            min_peak: 0.9,
            min_ratio: 1.5,
        }
    }
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self::for_plan(&PulsePlan::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// B's pulse `k` is A's pulse `k + pulse_offset`.
    pub pulse_offset: i64,
    pub peak: f64,
    pub second: f64,
}

struct Packed {
    words: Vec<u64>,
    len: usize,
}

impl Packed {
    fn new(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64) + 1];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self { words, len: bits.len() }
    }

    /// 64 bits starting at `pos` (bits past the end read as 0).
    fn get(&self, pos: usize) -> u64 {
        let (w, s) = (pos / 64, pos % 64);
        let lo = self.words.get(w).copied().unwrap_or(0) >> s;
        if s == 0 {
            lo
        } else {
            lo | self.words.get(w + 1).copied().unwrap_or(0) << (64 - s)
        }
    }
}

/// Normalized ±1 correlation of `a[k + lag]` with `b[k]` for `k < window`.
fn correlate(a: &Packed, b: &Packed, window: usize, lag: i64) -> (f64, usize) {
    let k0 = (-lag).max(0) as usize;
    let k1 = window.min(b.len).min((a.len as i64 - lag).max(0) as usize);
    if k1 <= k0 {
        return (0.0, 0);
    }
    let n = k1 - k0;
    let mut mismatches = 0u32;
    let mut k = k0;
    while k < k1 {
        let take = (k1 - k).min(64);
        let mask = if take == 64 { u64::MAX } else { (1u64 << take) - 1 };
        let x = a.get((k as i64 + lag) as usize) ^ b.get(k);
        mismatches += (x & mask).count_ones();
        k += take;
    }
    (1.0 - 2.0 * mismatches as f64 / n as f64, n)
}

/// Finds the pulse offset between the two stations' numbering.
pub fn align_pulse_numbering(a: &PeriodSeries, b: &PeriodSeries, cfg: &AlignConfig) -> Result<Alignment, SyncError> {
    let pa = Packed::new(&binarize(a)?);
    let pb = Packed::new(&binarize(b)?);
    let window = cfg.window.min(pb.len);
    let max_lag = cfg.max_lag as i64;
    let mut scores = Vec::with_capacity(2 * cfg.max_lag + 1);
    for lag in -max_lag..=max_lag {
        let (c, n) = correlate(&pa, &pb, window, lag);
        scores.push((lag, if n >= cfg.min_overlap { Some(c) } else { None }));
    }
    let (best_lag, peak) = scores
        .iter()
        .filter_map(|&(l, c)| c.map(|c| (l, c)))
        .fold(None, |acc: Option<(i64, f64)>, (l, c)| match acc {
            Some((_, bc)) if bc >= c => acc,
            _ => Some((l, c)),
        })
        .ok_or(SyncError::InsufficientOverlap {
            got: window.min(pa.len),
            need: cfg.min_overlap,
        })?;
    let second = scores
        .iter()
        .filter(|(l, _)| (l - best_lag).unsigned_abs() as usize >= cfg.lobe)
        .filter_map(|&(_, c)| c)
        .fold(f64::NEG_INFINITY, f64::max);
    let ok = peak >= cfg.min_peak && (second <= 0.0 || peak >= cfg.min_ratio * second);
    if !ok {
        return Err(SyncError::Ambiguous {
            lag: best_lag - b.start_index as i64 + a.start_index as i64,
            peak,
            second,
        });
    }
    Ok(Alignment {
        pulse_offset: best_lag + a.start_index as i64 - b.start_index as i64,
        peak,
        second,
    })
}

/// Affine relation `t_B = time_offset + rate_ratio · t_A` between the clocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockFit {
    pub pulse_offset: i64,
    /// Seconds.
    pub time_offset: f64,
    pub rate_ratio: f64,
    /// Seconds.
    pub residual_rms: f64,
    pub n_pairs: usize,
    /// Reference points (ps) keeping [`ClockFit::a_to_b`] exact for large timestamps.
    pub anchor_a: i64,
    pub anchor_b: i64,
}

impl ClockFit {
    /// Maps an A-clock timestamp (ps) into B's clock.
    pub fn a_to_b(&self, t_a: i64) -> f64 {
        self.anchor_b as f64 + self.rate_ratio * (t_a - self.anchor_a) as f64
    }
}

/// Least-squares affine fit over triggers matched by `pulse_offset`.
pub fn fit_clock_relation(trig_a: &[u64], trig_b: &[u64], pulse_offset: i64) -> Result<ClockFit, SyncError> {
    let kb0 = (-pulse_offset).max(0) as usize;
    let kb1 = trig_b.len().min((trig_a.len() as i64 - pulse_offset).max(0) as usize);
    let n = kb1.saturating_sub(kb0);
    if n < 10 {
        return Err(SyncError::TooFewPairs(n));
    }
    let pair = |k: usize| (trig_a[(k as i64 + pulse_offset) as usize] as i64, trig_b[k] as i64);
    let (ra, rb) = pair(kb0);
    // exact integer means relative to the first pair
    let (mut sa, mut sb) = (0i128, 0i128);
    for k in kb0..kb1 {
        let (a, b) = pair(k);
        sa += (a - ra) as i128;
        sb += (b - rb) as i128;
    }
    let ma = sa as f64 / n as f64;
    let mb = sb as f64 / n as f64;
    let (mut sxx, mut sxy) = (0f64, 0f64);
    for k in kb0..kb1 {
        let (a, b) = pair(k);
        let x = (a - ra) as f64 - ma;
        let y = (b - rb) as f64 - mb;
        sxx += x * x;
        sxy += x * y;
    }
    if sxx <= 0.0 {
        return Err(SyncError::TooFewPairs(n));
    }
    let rate = sxy / sxx;
    if !((rate - 1.0).abs() < 1e-3) {
        return Err(SyncError::RateOutOfRange(rate));
    }
    let mut ss = 0f64;
    for k in kb0..kb1 {
        let (a, b) = pair(k);
        let r = ((b - rb) as f64 - mb) - rate * ((a - ra) as f64 - ma);
        ss += r * r;
    }
    let anchor_a = ra + ma.round() as i64;
    let anchor_b_f = rb as f64 + mb + rate * (anchor_a - ra) as f64 - rate * ma;
    let anchor_b = anchor_b_f.round() as i64;
    // intercept at t_A = 0, in seconds
    let time_offset = (anchor_b_f - rate * anchor_a as f64) * 1e-12;
    Ok(ClockFit {
        pulse_offset,
        time_offset,
        rate_ratio: rate,
        residual_rms: (ss / n as f64).sqrt() * 1e-12,
        n_pairs: n,
        anchor_a,
        anchor_b,
    })
}

/// A photon detection placed on the pulse grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub station: Station,
    pub detector: Outcome,
    pub pulse_number: i64,
    /// Time since the pulse start after trigger-delay subtraction, ps.
    pub intra_ps: u64,
    /// Local-clock timestamp, ps.
    pub wall_ps: u64,
}

impl DetectionEvent {
    /// Seconds.
    pub fn intra_pulse_time(&self) -> f64 {
        self.intra_ps as f64 * 1e-12
    }

    /// Seconds.
    pub fn wall_time(&self) -> f64 {
        self.wall_ps as f64 * 1e-12
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub events: Vec<DetectionEvent>,
    /// Detections preceding the first trigger.
    pub dropped_before: u64,
    /// Detections more than one full period after the last trigger.
    pub dropped_after: u64,
}

impl Assignment {
    pub fn dropped(&self) -> u64 {
        self.dropped_before + self.dropped_after
    }

    /// Adds `offset` to every pulse number (e.g. to move B into A's numbering).
    pub fn renumber(&mut self, offset: i64) {
        for e in &mut self.events {
            e.pulse_number += offset;
        }
    }
}

/// Attributes each detection to the latest trigger at or before
/// `timestamp − trigger_delay`. Pulse numbers are trigger indices.
///
/// Detections are taken from `tags` (trigger tags in it are ignored);
/// `triggers` must be sorted. The last pulse is closed after the longest
/// observed interval.
pub fn assign_to_pulses(station: Station, tags: &[TimeTag], triggers: &[u64], trigger_delay_ps: i64) -> Assignment {
    let mut out = Assignment::default();
    let tail = triggers.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(u64::MAX);
    let mut idx = 0usize;
    let mut last_adj = i64::MIN;
    for t in tags {
        let Some(detector) = t.channel.detector() else { continue };
        let adj = t.timestamp as i64 - trigger_delay_ps;
        if adj < last_adj {
            idx = 0;
        }
        last_adj = adj;
        // tags are sorted, so the pointer only moves forward
        while idx < triggers.len() && triggers[idx] as i64 <= adj {
            idx += 1;
        }
        if idx == 0 {
            out.dropped_before += 1;
            continue;
        }
        let p = idx - 1;
        let intra = (adj - triggers[p] as i64) as u64;
        if p + 1 == triggers.len() && intra >= tail {
            out.dropped_after += 1;
            continue;
        }
        out.events.push(DetectionEvent {
            station,
            detector,
            pulse_number: p as i64,
            intra_ps: intra,
            wall_ps: t.timestamp,
        });
    }
    out
}

/// Alignment diagnostics for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub pulse_offset: i64,
    pub time_offset: f64,
    pub rate_ratio: f64,
    pub residual_rms: f64,
    pub correlation_peak: f64,
    pub correlation_second: f64,
    pub dropped: [u64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Channel;
    use crate::sim::{apply_clock, generate_trigger_train, ClockModel, FmPattern, TrueEvent};

    fn triggers(plan: &PulsePlan, skip: usize, clock: &ClockModel, seed: u64) -> Vec<u64> {
        let train = generate_trigger_train(plan).unwrap();
        let ev: Vec<TrueEvent> = train.starts_seconds()[skip..]
            .iter()
            .map(|&t| TrueEvent {
                channel: Channel::Trigger,
                time: t,
            })
            .collect();
        apply_clock(&ev, clock, 0.0, seed).iter().map(|t| t.timestamp).collect()
    }

    #[test]
    fn period_series_basic() {
        let s = PeriodSeries::from_times(&[0, 2_000_000, 4_000_000]).unwrap();
        assert_eq!(s.intervals, vec![2_000_000, 2_000_000]);
        assert!(PeriodSeries::from_times(&[5]).is_err());
    }

    #[test]
    fn period_series_matches_plan() {
        let plan = PulsePlan {
            n_pulses: 5_000,
            ..Default::default()
        };
        let clock = ClockModel {
            jitter_sigma: 10e-12,
            ..Default::default()
        };
        let s = PeriodSeries::from_times(&triggers(&plan, 0, &clock, 1)).unwrap();
        for (i, &x) in s.intervals.iter().enumerate() {
            assert!((x as i64 - plan.period_ps(i) as i64).abs() < 100);
        }
    }

    #[test]
    fn constant_pattern_is_rejected() {
        let plan = PulsePlan {
            n_pulses: 20_000,
            fm_pattern: FmPattern::Constant,
            ..Default::default()
        };
        let t = triggers(&plan, 0, &ClockModel::ideal(), 0);
        let s = PeriodSeries::from_times(&t).unwrap();
        assert_eq!(align_pulse_numbering(&s, &s, &AlignConfig::default()), Err(SyncError::PatternAbsent));
        // jitter alone does not look like a pattern
        let noisy = triggers(
            &plan,
            0,
            &ClockModel {
                jitter_sigma: 2e-9,
                ..Default::default()
            },
            3,
        );
        let s = PeriodSeries::from_times(&noisy).unwrap();
        assert_eq!(binarize(&s), Err(SyncError::PatternAbsent));
    }

    #[test]
    fn self_alignment_and_delay() {
        let plan = PulsePlan {
            n_pulses: 60_000,
            ..Default::default()
        };
        let a = triggers(&plan, 0, &ClockModel::ideal(), 0);
        let sa = PeriodSeries::from_times(&a).unwrap();
        assert_eq!(align_pulse_numbering(&sa, &sa, &AlignConfig::default()).unwrap().pulse_offset, 0);
        let clock = ClockModel {
            offset: 3e-3,
            drift_rate: 50e-6,
            jitter_sigma: 2e-9,
        };
        let b = triggers(&plan, 250, &clock, 1);
        let sb = PeriodSeries::from_times(&b).unwrap();
        let al = align_pulse_numbering(&sa, &sb, &AlignConfig::default()).unwrap();
        assert_eq!(al.pulse_offset, 250);
        assert!(al.peak > 0.99);
        // reversed roles
        let al = align_pulse_numbering(&sb, &sa, &AlignConfig::default()).unwrap();
        assert_eq!(al.pulse_offset, -250);
    }

    #[test]
    fn brute_force_agrees() {
        // every lag's correlation against a naive loop
        let plan = PulsePlan {
            n_pulses: 30_000,
            ..Default::default()
        };
        let a = PeriodSeries::from_times(&triggers(&plan, 0, &ClockModel::ideal(), 0)).unwrap();
        let b = PeriodSeries::from_times(&triggers(&plan, 77, &ClockModel::ideal(), 0)).unwrap();
        let (ba, bb) = (binarize(&a).unwrap(), binarize(&b).unwrap());
        let (pa, pb) = (Packed::new(&ba), Packed::new(&bb));
        for lag in [-300i64, -1, 0, 1, 77, 150, 5000] {
            let (c, n) = correlate(&pa, &pb, 20_000, lag);
            let mut m = 0i64;
            let mut cnt = 0;
            for k in 0..20_000i64 {
                let j = k + lag;
                if j < 0 || j as usize >= ba.len() || k as usize >= bb.len() {
                    continue;
                }
                m += if ba[j as usize] == bb[k as usize] { 1 } else { -1 };
                cnt += 1;
            }
            assert_eq!(n, cnt);
            assert!((c - m as f64 / cnt as f64).abs() < 1e-12, "lag {lag}");
        }
    }

    #[test]
    fn too_short_is_insufficient() {
        let plan = PulsePlan {
            n_pulses: 5_000,
            ..Default::default()
        };
        let a = PeriodSeries::from_times(&triggers(&plan, 0, &ClockModel::ideal(), 0)).unwrap();
        assert!(matches!(
            align_pulse_numbering(&a, &a, &AlignConfig::default()),
            Err(SyncError::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn clock_fit_recovers_injected_clock() {
        let plan = PulsePlan {
            n_pulses: 50_000,
            ..Default::default()
        };
        let a = triggers(&plan, 0, &ClockModel::ideal(), 0);
        let fit = fit_clock_relation(&a, &a, 0).unwrap();
        assert!(fit.time_offset.abs() < 1e-12);
        assert!((fit.rate_ratio - 1.0).abs() < 1e-12);
        assert!(fit.residual_rms < 1e-12);

        let clock = ClockModel {
            offset: 1e-3,
            drift_rate: 10e-6,
            jitter_sigma: 0.0,
        };
        let b = triggers(&plan, 40, &clock, 0);
        let fit = fit_clock_relation(&a, &b, 40).unwrap();
        assert!((fit.time_offset - 1e-3).abs() < 1e-12, "{}", fit.time_offset);
        assert!((fit.rate_ratio - 1.00001).abs() < 0.01e-6);
        assert_eq!(fit.n_pairs, 49_960);
        // anchor mapping lands on the B trigger
        let mapped = fit.a_to_b(a[1000 + 40] as i64);
        assert!((mapped - b[1000] as f64).abs() < 2.0);
    }

    #[test]
    fn clock_fit_residual_from_jitter() {
        let plan = PulsePlan {
            n_pulses: 50_000,
            ..Default::default()
        };
        let j = ClockModel {
            jitter_sigma: 2e-9,
            ..Default::default()
        };
        let a = triggers(&plan, 0, &j, 1);
        let b = triggers(&plan, 0, &j, 2);
        let fit = fit_clock_relation(&a, &b, 0).unwrap();
        let expected = 2f64.sqrt() * 2e-9;
        assert!((fit.residual_rms - expected).abs() < 0.1 * expected);
        // residuals have zero mean by construction
        let n = a.len() as f64;
        let mean: f64 = a.iter().zip(&b).map(|(&x, &y)| y as f64 - fit.a_to_b(x as i64)).sum::<f64>() / n;
        assert!(mean.abs() < fit.residual_rms * 1e12 / n.sqrt());
    }

    #[test]
    fn fit_needs_pairs() {
        let a: Vec<u64> = (0..5).map(|i| i * 2_000_000).collect();
        assert_eq!(fit_clock_relation(&a, &a, 0), Err(SyncError::TooFewPairs(5)));
    }

    #[test]
    fn assignment_rules() {
        let trig = [1_000_000u64, 3_000_000, 5_000_000];
        let delay = 57_000;
        let tags = vec![
            TimeTag::new(Channel::DetPlus, 500_000),                // before first trigger
            TimeTag::new(Channel::Trigger, 1_000_000),
            TimeTag::new(Channel::DetMinus, 1_000_000 + 57_000),    // exactly at pulse start
            TimeTag::new(Channel::DetPlus, 3_000_000 + 57_000 + 123_000),
            TimeTag::new(Channel::DetPlus, 5_000_000 + 57_000 + 2_500_000), // past the tail
        ];
        let a = assign_to_pulses(Station::A, &tags, &trig, delay);
        assert_eq!(a.dropped_before, 1);
        assert_eq!(a.dropped_after, 1);
        assert_eq!(a.events.len(), 2);
        assert_eq!(a.events[0].pulse_number, 0);
        assert_eq!(a.events[0].intra_ps, 0);
        assert_eq!(a.events[0].detector, Outcome::Minus);
        assert_eq!(a.events[1].pulse_number, 1);
        assert_eq!(a.events[1].intra_ps, 123_000);
        assert_eq!(a.events.len() as u64 + a.dropped(), 4);
    }
}
