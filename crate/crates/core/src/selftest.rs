//! The acceptance checks, callable from tests and from `strobe selftest`.
//!
//! Each check returns a [`CheckResult`] instead of panicking so a runner can
//! print one line per check and keep going.

use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{mean_and_sd, Estimate, SlotSeries};
use crate::coinc::accidental_estimate;
use crate::model::{chsh_ideal, coincidence_gap, min_counts_for_gap, visibility_from_contrast, TransientMode};
use crate::session::{run_session_in_memory, summarize, AnalysisSummary, ExperimentConfig, TransientReport};
use crate::sim::{apply_clock, derive_seed, generate_trigger_train, ClockModel, PulsePlan, TrueEvent};
use crate::sync::{align_pulse_numbering, fit_clock_relation, AlignConfig, PeriodSeries};
use crate::tagfmt::{self, TagFileHeader};
use crate::{Channel, Station, TimeTag};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} criterion {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

/// How much statistics the session-level checks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    /// 100 sessions per ensemble, as the thresholds are stated.
    Full,
    /// 20 sessions per ensemble, same pass fractions.
    Quick,
}

impl Depth {
    pub fn repetitions(self) -> usize {
        match self {
            Depth::Full => 100,
            Depth::Quick => 20,
        }
    }
}

fn result(id: u8, name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        id,
        name,
        passed,
        detail,
    }
}

fn needed(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil() as usize
}

pub fn accidentals() -> CheckResult {
    let a = accidental_estimate(200.0, 200.0, 4e-9, 30.0);
    result(
        1,
        "accidentals",
        (a - 4.8e-3).abs() <= 1e-15,
        format!("accidental_estimate(200, 200, 4 ns, 30 s) = {a:.6e}"),
    )
}

pub fn significance_threshold() -> CheckResult {
    let n1 = min_counts_for_gap(0.052, 1.0).ok();
    let n3 = min_counts_for_gap(0.052, 3.0).ok();
    let exact = (1.0f64 / 0.052).powi(2);
    result(
        2,
        "significance threshold",
        n1 == Some(370) && n3 == Some(3329),
        format!("N(1σ) = {n1:?} (exact {exact:.1}), N(3σ) = {n3:?}, {:.1}× the 10³ working level", 3329.0 / 1e3),
    )
}

pub fn contrast_calibration() -> CheckResult {
    let s = visibility_from_contrast(100.0).map(chsh_ideal).unwrap_or(f64::NAN);
    result(
        3,
        "contrast calibration",
        (s - 2.772).abs() <= 0.005,
        format!("S(contrast 100) = {s:.4}"),
    )
}

pub fn gap_scan() -> CheckResult {
    let n = 1_000_000;
    let (best, at) = (0..=n)
        .map(|k| {
            let d = k as f64 * PI / 2.0 / n as f64;
            (coincidence_gap(d), d)
        })
        .fold((0.0, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc });
    let g1 = coincidence_gap(PI / 8.0);
    let g3 = coincidence_gap(3.0 * PI / 8.0);
    let ok = (best - 0.052).abs() <= 0.001 && (best - g1).abs() <= 0.001 && (best - g3).abs() <= 0.001;
    result(
        4,
        "gap",
        ok,
        format!(
            "max gap {best:.5} at {:.4} and {:.4} rad; gap at π/8 {g1:.5}, at 3π/8 {g3:.5}",
            at.min(PI / 2.0 - at),
            at.max(PI / 2.0 - at)
        ),
    )
}

/// Desk-scale session: 20 ns slots and boosted rates so every in-pulse slot
/// of every setting holds well over 10³ coincidences.
pub fn boosted_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        ..Default::default()
    };
    c.analysis.slot_width = 20e-9;
    c.station_a.detector_efficiency = 0.8;
    c.station_b.detector_efficiency = 0.8;
    c.source.pair_yield = 0.08;
    c.session.repeats = 2;
    c.session.run_duration = 1.4;
    c
}

/// Default physics, 32 runs of 1 s.
pub fn default_short_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        ..Default::default()
    };
    c.session.run_duration = 1.0;
    c
}

fn session(cfg: &ExperimentConfig) -> Option<(AnalysisSummary, SlotSeries)> {
    let acc = run_session_in_memory(cfg).ok()?;
    summarize(cfg, &acc).ok()
}

fn ensemble(make: impl Fn(u64) -> ExperimentConfig + Sync, seeds: std::ops::Range<u64>) -> Vec<Option<(AnalysisSummary, SlotSeries)>> {
    let seeds: Vec<u64> = seeds.collect();
    seeds.par_iter().map(|&s| session(&make(s))).collect()
}

const NULL_SEED_BASE: u64 = 0x5000;
const MONO_SEED_BASE: u64 = 0x6000;
const OSC_SEED_BASE: u64 = 0x7000;

pub fn null_end_to_end(depth: Depth) -> CheckResult {
    let n = depth.repetitions();
    let runs = ensemble(boosted_config, NULL_SEED_BASE..NULL_SEED_BASE + n as u64);
    let ok: Vec<&(AnalysisSummary, SlotSeries)> = runs.iter().flatten().collect();
    if ok.len() != n {
        return result(5, "null end-to-end", false, format!("{} of {n} sessions failed", n - ok.len()));
    }

    // plateau S of the first session against the drift-averaged expectation
    let first = &ok[0].0;
    let expected = first.expected.s_qm;
    let (s_ok, s_text) = match first.plateau.as_ref().and_then(|p| p.in_pulse_s) {
        Some(s) => (
            (s.value - expected).abs() <= 3.0 * s.sigma,
            format!("S {:.4} ± {:.4} vs {expected:.4}", s.value, s.sigma),
        ),
        None => (false, "no plateau S".into()),
    };
    let within: usize = ok
        .iter()
        .filter(|(s, _)| {
            s.plateau
                .as_ref()
                .and_then(|p| p.in_pulse_s)
                .is_some_and(|e| (e.value - s.expected.s_qm).abs() <= 3.0 * e.sigma)
        })
        .count();

    let min_cells = ok
        .iter()
        .filter_map(|(s, series)| {
            let p = s.plateau.as_ref()?;
            series.counts.min_setting_coincidences()[p.in_pulse.first..=p.in_pulse.last].iter().min().copied()
        })
        .min()
        .unwrap_or(0);

    // pooled χ² across sessions
    let (chi, dof) = ok.iter().fold((0.0, 0usize), |(c, d), (s, _)| match &s.plateau {
        Some(p) => (c + p.reduced_chi2_s.unwrap_or(0.0) * p.chi2_dof as f64, d + p.chi2_dof),
        None => (c, d),
    });
    let pooled = if dof > 0 { chi / dof as f64 } else { f64::NAN };
    let chi_ok = (0.7..=1.3).contains(&pooled);

    let nones = ok.iter().filter(|(s, _)| matches!(s.transient, TransientReport::None)).count();
    let none_ok = nones >= needed(0.95, n);

    let calib = error_calibration(&ok);
    let calib_ok = calib.is_some_and(|c| (0.85..=1.15).contains(&c));

    result(
        5,
        "null end-to-end",
        s_ok && chi_ok && none_ok && calib_ok && min_cells >= 1000,
        format!(
            "{s_text} ({within}/{n} within 3σ); min cell {min_cells}; pooled χ²/dof {pooled:.3} (dof {dof}); \
             verdict none {nones}/{n}; SD(S)/σ {}",
            calib.map_or("n/a".into(), |c| format!("{c:.3}"))
        ),
    )
}

/// Empirical spread of per-slot S across sessions over the mean reported
/// sigma, averaged over the in-pulse slots.
fn error_calibration(sessions: &[&(AnalysisSummary, SlotSeries)]) -> Option<f64> {
    let p = sessions.first()?.0.plateau.as_ref()?;
    let mut ratios = Vec::new();
    for i in p.in_pulse.first..=p.in_pulse.last {
        let vals: Vec<Estimate> = sessions.iter().filter_map(|(_, s)| s.s.get(i).copied().flatten()).collect();
        if vals.len() < sessions.len() {
            continue;
        }
        let (_, sd, _) = mean_and_sd(vals.iter().map(|e| e.value))?;
        let sigma = vals.iter().map(|e| e.sigma).sum::<f64>() / vals.len() as f64;
        ratios.push(sd / sigma);
    }
    mean_and_sd(ratios).map(|x| x.0)
}

fn tdh_config(mode: TransientMode) -> impl Fn(u64) -> ExperimentConfig + Sync {
    move |seed| {
        let mut c = boosted_config(seed);
        c.source.transient.mode = mode;
        c.source.transient.theta_over_tau = 1.0;
        c.source.transient.osc_period_over_tau = 3.0;
        c.source.transient.floor_product = 2.0;
        c
    }
}

/// Detections whose flagged run lies inside the first 2·tau.
fn detections(runs: &[Option<(AnalysisSummary, SlotSeries)>]) -> usize {
    runs.iter()
        .flatten()
        .filter(|(s, _)| match &s.transient {
            TransientReport::Deviation(d) => d.end <= 2.0 * s.geometry.tau + 1e-12,
            _ => false,
        })
        .count()
}

pub fn tdh_end_to_end(depth: Depth) -> CheckResult {
    let n = depth.repetitions();
    let mono = detections(&ensemble(tdh_config(TransientMode::Monotone), MONO_SEED_BASE..MONO_SEED_BASE + n as u64));
    let osc = detections(&ensemble(tdh_config(TransientMode::Oscillatory), OSC_SEED_BASE..OSC_SEED_BASE + n as u64));
    result(
        6,
        "transient end-to-end",
        mono >= needed(0.95, n) && osc >= needed(0.90, n),
        format!("monotone detected {mono}/{n}, oscillatory {osc}/{n}, all inside 2τ"),
    )
}

fn trigger_stamps(plan: &PulsePlan, skip: usize, clock: &ClockModel, origin: f64, seed: u64) -> Vec<u64> {
    let train = generate_trigger_train(plan).expect("valid plan");
    let ev: Vec<TrueEvent> = train.starts_seconds()[skip..]
        .iter()
        .map(|&t| TrueEvent {
            channel: Channel::Trigger,
            time: t,
        })
        .collect();
    apply_clock(&ev, clock, origin, seed).iter().map(|t| t.timestamp).collect()
}

pub fn synchronization() -> CheckResult {
    let plan = PulsePlan {
        n_pulses: 60_000,
        ..Default::default()
    };
    let cfg = AlignConfig::for_plan(&plan);
    let trials: Vec<(bool, f64)> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x7, k));
            let offset: i64 = rng.random_range(-1000..=1000);
            let skip = [(-offset).max(0) as usize, offset.max(0) as usize];
            let clocks = [0, 1].map(|_| ClockModel {
                offset: rng.random_range(0.0..1e-2),
                drift_rate: rng.random_range(-50e-6..=50e-6),
                jitter_sigma: 2e-9,
            });
            let origin = rng.random_range(1.0..100.0);
            let a = trigger_stamps(&plan, skip[0], &clocks[0], origin, rng.random());
            let b = trigger_stamps(&plan, skip[1], &clocks[1], origin, rng.random());
            let (Ok(sa), Ok(sb)) = (PeriodSeries::from_times(&a), PeriodSeries::from_times(&b)) else {
                return (false, f64::INFINITY);
            };
            let Ok(al) = align_pulse_numbering(&sa, &sb, &cfg) else {
                return (false, f64::INFINITY);
            };
            let Ok(fit) = fit_clock_relation(&a, &b, al.pulse_offset) else {
                return (false, f64::INFINITY);
            };
            let ratio = (1.0 + clocks[1].drift_rate) / (1.0 + clocks[0].drift_rate);
            (al.pulse_offset == offset, (fit.rate_ratio - ratio).abs())
        })
        .collect();
    let exact = trials.iter().filter(|t| t.0).count();
    let worst = trials.iter().map(|t| t.1).fold(0.0, f64::max);
    result(
        7,
        "synchronization",
        exact == 100 && worst <= 0.05e-6,
        format!("exact offset {exact}/100, worst rate error {:.4} ppm", worst * 1e6),
    )
}

/// The default-physics session shared by the consistency and product checks.
pub fn default_session() -> Option<&'static (AnalysisSummary, SlotSeries)> {
    static CELL: OnceLock<Option<(AnalysisSummary, SlotSeries)>> = OnceLock::new();
    CELL.get_or_init(|| session(&default_short_config(0x8000))).as_ref()
}

pub fn stroboscopic_consistency() -> CheckResult {
    let Some((s, _)) = default_session() else {
        return result(8, "stroboscopic consistency", false, "session failed".into());
    };
    let Some(p) = &s.plateau else {
        return result(8, "stroboscopic consistency", false, "no in-pulse slots".into());
    };
    let (Some(avg), Some(all), Some(eta_all), Some(eta_in)) = (p.time_avg_s, p.all_data_s, p.all_data_eta, p.in_pulse_eta)
    else {
        return result(8, "stroboscopic consistency", false, "undefined statistics".into());
    };
    let s_ok = (avg - all.value).abs() < 2.0 * all.sigma;
    let eta_ok = eta_all.value < eta_in.value;
    result(
        8,
        "stroboscopic consistency",
        s_ok && eta_ok,
        format!(
            "time-avg S {avg:.4} vs all-data {:.4} ± {:.4}; η all-data {:.4} < in-pulse {:.4}",
            all.value, all.sigma, eta_all.value, eta_in.value
        ),
    )
}

pub fn format_round_trip() -> CheckResult {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ts = 0u64;
    let tags: Vec<TimeTag> = (0..n)
        .map(|_| {
            ts += rng.random_range(0..1_000_000u64);
            let ch = Channel::from_u8(rng.random_range(1..=3)).expect("valid channel");
            TimeTag::new(ch, ts)
        })
        .collect();
    let mut tags = tags;
    tags.sort_unstable();
    let header = TagFileHeader::new(Station::B, n as u64);
    let mut bytes = Vec::new();
    let written = tagfmt::write_tags(&header, &tags, &mut bytes);
    let back = tagfmt::read_tags(bytes.as_slice())
        .and_then(|(h, r)| Ok((h, r.collect::<Result<Vec<TimeTag>, _>>()?)));
    let mut again = Vec::new();
    let ok = match (&written, &back) {
        (Ok(len), Ok((h, got))) => {
            tagfmt::write_tags(h, got, &mut again).is_ok()
                && *got == tags
                && again == bytes
                && *len == 40 + 16 * n as u64
                && bytes.len() == 40 + 16 * n
        }
        _ => false,
    };
    result(
        9,
        "format round trip",
        ok,
        format!("{n} records, {} bytes (40 + 16·N = {})", bytes.len(), 40 + 16 * n),
    )
}

pub fn product_bound() -> CheckResult {
    let Some((s, series)) = default_session() else {
        return result(10, "product bound", false, "session failed".into());
    };
    let pb = &s.product_bound;
    let defined = series.product.iter().flatten().count();
    let max = pb.max_product.map_or(f64::NAN, |e| e.value);
    let (resc_ok, resc) = match pb.rescaled_plateau {
        Some(r) => (
            pb.rescaled_matches_qm == Some(true),
            format!("{:.4} ± {:.4}", r.value, r.sigma),
        ),
        None => (false, "n/a".into()),
    };
    result(
        10,
        "product bound",
        pb.all_below_bound && defined > 0 && resc_ok,
        format!(
            "max S·η {max:.4} over {defined} slots (all < 2: {}); S·η/η₀ {resc} vs {:.4} (η₀ {:.4})",
            pb.all_below_bound, s.expected.s_qm, s.expected.eta0
        ),
    )
}

/// Runs every check in order.
pub fn run_all(depth: Depth) -> Vec<CheckResult> {
    vec![
        accidentals(),
        significance_threshold(),
        contrast_calibration(),
        gap_scan(),
        null_end_to_end(depth),
        tdh_end_to_end(depth),
        synchronization(),
        stroboscopic_consistency(),
        format_round_trip(),
        product_bound(),
    ]
}
