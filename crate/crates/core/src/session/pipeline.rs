use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConfigError, ExperimentConfig, RunEntry, RunManifest, RunStatus, SessionMode, MANIFEST_FILE};
use crate::analysis::{
    angle_scan_curves, detect_transient_series, plateau_summary, significance_mask, AnalysisError, DeviationRun,
    Estimate, PlateauSummary, ScanCurves, ScanPoint, SlotCounts, SlotSeries, TransientConfig, TransientVerdict,
};
use crate::coinc::{accidental_estimate, match_coincidences, CoincidenceTable, DeltaTHistogram};
use crate::model::{AngleSetting, Geometry, TSIRELSON_BOUND, CLASSICAL_BOUND};
use crate::sim::{derive_seed, emit_events, RunContext, SimError};
use crate::sync::{align_pulse_numbering, assign_to_pulses, fit_clock_relation, PeriodSeries, SyncError, SyncReport};
use crate::tagfmt::{self, TagFormatError};
use crate::{s_to_ps, trigger_times, Station, TimeTag};

pub const SUMMARY_SCHEMA: &str = "strobe.summary/1";
pub const SERIES_FILE: &str = "series.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DELTA_T_FILE: &str = "delta_t.csv";
pub const TABLES_FILE: &str = "tables.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: TagFormatError },
    #[error("run {run}: {source}")]
    Sync { run: usize, source: SyncError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown schema {0:?}")]
    Schema(String),
    #[error("refusing to merge sessions {0:?} and {1:?}")]
    SessionMismatch(String, String),
    #[error("no usable runs")]
    NoUsableRuns,
    #[error("missing input {0}")]
    Missing(PathBuf),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Everything fixed about a run before it is simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub index: usize,
    pub setting: usize,
    pub angles: AngleSetting,
    pub seed: u64,
    pub ctx: RunContext,
    pub glitched: bool,
}

const RUN_STREAM: u64 = 0x1000;
const SKEW_STREAM: u64 = 0x51;
const GLITCH_STREAM: u64 = 0x61;

pub fn plan_runs(cfg: &ExperimentConfig) -> Vec<RunPlan> {
    (0..cfg.n_runs())
        .map(|r| {
            let seed = derive_seed(cfg.seed, RUN_STREAM + r as u64);
            let mut skew = ChaCha8Rng::seed_from_u64(derive_seed(seed, SKEW_STREAM));
            let max = cfg.session.max_start_skew;
            let skip = [skew.random_range(0..=max), skew.random_range(0..=max)];
            let glitched = cfg.session.glitch_probability > 0.0
                && ChaCha8Rng::seed_from_u64(derive_seed(seed, GLITCH_STREAM)).random::<f64>()
                    < cfg.session.glitch_probability;
            let start = cfg.run_start(r);
            let setting = cfg.setting_label(r);
            RunPlan {
                index: r,
                setting,
                angles: cfg.setting(setting),
                seed,
                ctx: RunContext {
                    session_time: start,
                    clock_origin: cfg.session.clock_epoch + start,
                    skip_pulses: skip,
                },
                glitched,
            }
        })
        .collect()
}

/// Tag streams of A and B for one run.
pub fn simulate_run(cfg: &ExperimentConfig, plan: &RunPlan) -> Result<[Vec<TimeTag>; 2], PipelineError> {
    let (a, b) = emit_events(
        &cfg.pulse_plan(),
        &cfg.source_config()?,
        [&cfg.station_a, &cfg.station_b],
        plan.angles,
        &cfg.state()?,
        &plan.ctx,
        plan.seed,
    )?;
    Ok([a, b])
}

/// Per-run analysis output, ready to be merged.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub index: usize,
    pub setting: usize,
    pub counts: SlotCounts,
    pub delta_t: DeltaTHistogram,
    pub sync: SyncReport,
    pub n_records: usize,
}

/// Sync → assign → match → bin for one run.
pub fn analyze_tags(
    cfg: &ExperimentConfig,
    index: usize,
    setting: usize,
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
) -> Result<RunResult, PipelineError> {
    let sync_err = |source| PipelineError::Sync { run: index, source };
    let ta = trigger_times(tags_a);
    let tb = trigger_times(tags_b);
    let sa = PeriodSeries::from_times(&ta).map_err(sync_err)?;
    let sb = PeriodSeries::from_times(&tb).map_err(sync_err)?;
    let al = align_pulse_numbering(&sa, &sb, &cfg.align_config()).map_err(sync_err)?;
    let fit = fit_clock_relation(&ta, &tb, al.pulse_offset).map_err(sync_err)?;
    let ev_a = assign_to_pulses(Station::A, tags_a, &ta, s_to_ps(cfg.station_a.trigger_delay));
    let mut ev_b = assign_to_pulses(Station::B, tags_b, &tb, s_to_ps(cfg.station_b.trigger_delay));
    ev_b.renumber(al.pulse_offset);
    let window = s_to_ps(cfg.analysis.window) as u64;
    let records = match_coincidences(&ev_a.events, &ev_b.events, window);

    let mut counts = SlotCounts::new(cfg.slot_grid()?, cfg.n_settings());
    counts.add_run(setting, &ev_a.events, &ev_b.events, &records);
    let mut delta_t = DeltaTHistogram::new(window, s_to_ps(cfg.analysis.dt_bin) as u64);
    delta_t.add(&records);
    Ok(RunResult {
        index,
        setting,
        counts,
        delta_t,
        sync: SyncReport {
            pulse_offset: al.pulse_offset,
            time_offset: fit.time_offset,
            rate_ratio: fit.rate_ratio,
            residual_rms: fit.residual_rms,
            correlation_peak: al.peak,
            correlation_second: al.second,
            dropped: [ev_a.dropped(), ev_b.dropped()],
        },
        n_records: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRun {
    pub index: usize,
    pub reason: String,
}

/// Session totals, merged in run order.
#[derive(Debug, Clone)]
pub struct SessionAccumulator {
    pub counts: SlotCounts,
    pub delta_t: DeltaTHistogram,
    pub sync: Vec<(usize, SyncReport)>,
    pub runs_used: usize,
    pub runs_glitched: usize,
    pub skipped: Vec<SkippedRun>,
}

impl SessionAccumulator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            counts: SlotCounts::new(cfg.slot_grid()?, cfg.n_settings()),
            delta_t: DeltaTHistogram::new(s_to_ps(cfg.analysis.window) as u64, s_to_ps(cfg.analysis.dt_bin) as u64),
            sync: Vec::new(),
            runs_used: 0,
            runs_glitched: 0,
            skipped: Vec::new(),
        })
    }

    pub fn add(&mut self, r: &RunResult) {
        self.counts.merge(&r.counts);
        self.delta_t.merge(&r.delta_t);
        self.sync.push((r.index, r.sync.clone()));
        self.runs_used += 1;
    }
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}

/// Simulates and analyzes a whole session without touching the disk.
/// Glitched runs are dropped exactly as in the file-based path.
pub fn run_session_in_memory(cfg: &ExperimentConfig) -> Result<SessionAccumulator, PipelineError> {
    cfg.validate()?;
    let plans = plan_runs(cfg);
    let results: Vec<Option<Result<RunResult, PipelineError>>> = pool(cfg.workers).install(|| {
        plans
            .par_iter()
            .map(|p| {
                if p.glitched {
                    return None;
                }
                Some(simulate_run(cfg, p).and_then(|[a, b]| analyze_tags(cfg, p.index, p.setting, &a, &b)))
            })
            .collect()
    });
    let mut acc = SessionAccumulator::new(cfg)?;
    for (p, r) in plans.iter().zip(results) {
        match r {
            None => acc.runs_glitched += 1,
            Some(Ok(r)) => acc.add(&r),
            Some(Err(e)) => {
                log::warn!("run {} skipped: {e}", p.index);
                acc.skipped.push(SkippedRun {
                    index: p.index,
                    reason: e.to_string(),
                });
            }
        }
    }
    if acc.runs_used == 0 {
        return Err(PipelineError::NoUsableRuns);
    }
    Ok(acc)
}

fn run_file(dir: &Path, index: usize, station: Station) -> PathBuf {
    let s = match station {
        Station::A => 'a',
        Station::B => 'b',
    };
    dir.join(format!("run{index:03}_{s}.bstrobe"))
}

/// Simulates every run of the session into `out_dir` and writes the manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let plans = plan_runs(cfg);
    let pulse_plan = cfg.pulse_plan();
    let n_pulses = pulse_plan.n_pulses;
    let recorded = n_pulses as f64 * pulse_plan.mean_period();
    let entries: Vec<Result<RunEntry, PipelineError>> = pool(cfg.workers).install(|| {
        plans
            .par_iter()
            .map(|p| {
                let [a, b] = simulate_run(cfg, p)?;
                let mut files = [PathBuf::new(), PathBuf::new()];
                for (k, (station, tags)) in [(Station::A, &a), (Station::B, &b)].into_iter().enumerate() {
                    let path = run_file(out_dir, p.index, station);
                    tagfmt::write_file(&path, station, tags).map_err(|source| PipelineError::Format {
                        path: path.clone(),
                        source,
                    })?;
                    files[k] = PathBuf::from(path.file_name().expect("file name"));
                }
                if p.glitched {
                    // a damaged recording: B's file loses its tail mid-record
                    let path = run_file(out_dir, p.index, Station::B);
                    let len = fs::metadata(&path).map_err(|e| PipelineError::io(&path, e))?.len();
                    let f = fs::OpenOptions::new().write(true).open(&path).map_err(|e| PipelineError::io(&path, e))?;
                    f.set_len(len.saturating_sub(7).max(tagfmt::HEADER_LEN as u64))
                        .map_err(|e| PipelineError::io(&path, e))?;
                }
                Ok(RunEntry {
                    index: p.index,
                    setting: p.setting,
                    angles: p.angles,
                    files,
                    seed: p.seed,
                    span: [p.ctx.session_time, p.ctx.session_time + recorded],
                    n_pulses,
                    status: if p.glitched { RunStatus::Glitched } else { RunStatus::Ok },
                })
            })
            .collect()
    });
    let mut manifest = RunManifest::new(cfg);
    for e in entries {
        manifest.runs.push(e?);
    }
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn read_run(base: &Path, entry: &RunEntry) -> Result<[Vec<TimeTag>; 2], PipelineError> {
    let mut out: [Vec<TimeTag>; 2] = [Vec::new(), Vec::new()];
    for (k, station) in [Station::A, Station::B].into_iter().enumerate() {
        let path = base.join(&entry.files[k]);
        let (header, tags) = tagfmt::read_file(&path).map_err(|source| PipelineError::Format {
            path: path.clone(),
            source,
        })?;
        if header.station != station {
            return Err(PipelineError::Format {
                path,
                source: TagFormatError::BadStation(header.station.id()),
            });
        }
        out[k] = tags;
    }
    Ok(out)
}

/// Analyzes the ok runs of one or more manifests of the same session.
/// `manifests` pairs each manifest with the directory its file paths are relative to.
pub fn analyze_manifests(manifests: &[(RunManifest, PathBuf)]) -> Result<(ExperimentConfig, SessionAccumulator), PipelineError> {
    let (first, _) = manifests.first().ok_or(PipelineError::NoUsableRuns)?;
    for (m, _) in &manifests[1..] {
        if m.session_id != first.session_id {
            return Err(PipelineError::SessionMismatch(first.session_id.clone(), m.session_id.clone()));
        }
    }
    let cfg = first.config.clone();
    cfg.validate()?;
    let jobs: Vec<(&RunEntry, &Path)> = manifests
        .iter()
        .flat_map(|(m, base)| m.runs.iter().map(move |r| (r, base.as_path())))
        .collect();
    let results: Vec<Option<Result<RunResult, PipelineError>>> = pool(cfg.workers).install(|| {
        jobs.par_iter()
            .map(|(entry, base)| {
                if entry.status == RunStatus::Glitched {
                    return None;
                }
                Some(read_run(base, entry).and_then(|[a, b]| analyze_tags(&cfg, entry.index, entry.setting, &a, &b)))
            })
            .collect()
    });
    let mut acc = SessionAccumulator::new(&cfg)?;
    for ((entry, _), r) in jobs.iter().zip(results) {
        match r {
            None => acc.runs_glitched += 1,
            Some(Ok(r)) => acc.add(&r),
            Some(Err(e)) => {
                log::warn!("run {} skipped: {e}", entry.index);
                acc.skipped.push(SkippedRun {
                    index: entry.index,
                    reason: e.to_string(),
                });
            }
        }
    }
    if acc.runs_used == 0 {
        return Err(PipelineError::NoUsableRuns);
    }
    Ok((cfg, acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryStatus {
    Ok,
    /// At least one ok run could not be analyzed.
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum TransientReport {
    None,
    Deviation(DeviationRun),
    Untestable { reason: String },
}

impl TransientReport {
    pub fn is_deviation(&self) -> bool {
        matches!(self, TransientReport::Deviation(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub visibility: f64,
    /// Averaged over the session's drift.
    pub mean_visibility: f64,
    pub s_qm: f64,
    /// Fair-sampling efficiency of the headline detector.
    pub eta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductBound {
    pub bound: f64,
    pub max_product: Option<Estimate>,
    /// Every defined slot of `S·η` is below the bound.
    pub all_below_bound: bool,
    /// In-pulse `S·η / η₀`.
    pub rescaled_plateau: Option<Estimate>,
    /// `rescaled_plateau` within 3σ of the expected `S`.
    pub rescaled_matches_qm: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accidentals {
    /// `(2·dark_A)·(2·dark_B)·(2·window)·T` over a whole run of length `T`.
    pub expected_per_run: f64,
    /// The same, restricted to the off-pulse slots used for `observed_off_pulse_per_run`.
    pub expected_off_pulse_per_run: f64,
    /// Coincidences in off-pulse slots (beyond a 40 ns margin), per run.
    pub observed_off_pulse_per_run: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTStats {
    pub mean: f64,
    pub sd: f64,
    /// Detector and clock jitters combined, truncated to the coincidence window.
    pub expected_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSync {
    pub index: usize,
    #[serde(flatten)]
    pub report: SyncReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub schema: String,
    pub session_id: String,
    pub status: SummaryStatus,
    pub runs_used: usize,
    pub runs_glitched: usize,
    pub skipped: Vec<SkippedRun>,
    pub geometry: Geometry,
    pub slot_width: f64,
    pub n_slots: usize,
    pub expected: Expectations,
    pub plateau: Option<PlateauSummary>,
    pub product_bound: ProductBound,
    pub transient: TransientReport,
    pub scan: Option<ScanCurves>,
    pub accidentals: Accidentals,
    pub delta_t: DeltaTStats,
    pub singles_totals: [u64; 4],
    pub coincidence_totals: Vec<[u64; 4]>,
    pub off_grid: u64,
    pub sync: Vec<RunSync>,
}

/// Statistics and verdicts for an accumulated session.
pub fn summarize(cfg: &ExperimentConfig, acc: &SessionAccumulator) -> Result<(AnalysisSummary, SlotSeries), PipelineError> {
    let head = cfg.analysis.headline;
    let series = SlotSeries::from_counts(acc.counts.clone(), head);
    let mask = significance_mask(&series.counts, cfg.analysis.min_coincidences);
    let geometry = cfg.geometry()?;
    let plateau = match plateau_summary(&series, &mask) {
        Ok(p) => Some(p),
        Err(AnalysisError::EmptyPulse) => None,
        Err(e) => return Err(e.into()),
    };
    let mean_v = cfg.mean_visibility()?;
    let expected = Expectations {
        visibility: cfg.visibility()?,
        mean_visibility: mean_v,
        s_qm: TSIRELSON_BOUND * mean_v,
        eta0: cfg.eta0(head),
    };

    let transient = match (&plateau, cfg.session.mode) {
        (_, SessionMode::Scan34) => TransientReport::Untestable {
            reason: "angle scan sessions carry no CHSH series".into(),
        },
        (None, _) => TransientReport::Untestable {
            reason: "no in-pulse slots".into(),
        },
        (Some(p), _) => {
            let tc = TransientConfig {
                tau: geometry.tau,
                k_sigma: cfg.analysis.k_sigma,
            };
            match detect_transient_series(&series, &mask, p.in_pulse, &tc) {
                Ok(TransientVerdict::None) => TransientReport::None,
                Ok(TransientVerdict::Deviation(d)) => TransientReport::Deviation(d),
                Err(e) => TransientReport::Untestable { reason: e.to_string() },
            }
        }
    };

    let rescaled = plateau
        .as_ref()
        .and_then(|p| crate::analysis::product(p.in_pulse_s, p.in_pulse_eta))
        .filter(|_| expected.eta0 > 0.0)
        .map(|e| Estimate::new(e.value / expected.eta0, e.sigma / expected.eta0));
    let product_bound = ProductBound {
        bound: CLASSICAL_BOUND,
        max_product: plateau.as_ref().and_then(|p| p.max_product),
        all_below_bound: series.product.iter().flatten().all(|e| e.value < CLASSICAL_BOUND),
        rescaled_plateau: rescaled,
        rescaled_matches_qm: rescaled.map(|r| (r.value - expected.s_qm).abs() <= 3.0 * r.sigma),
    };

    let scan = if cfg.session.mode == SessionMode::Scan34 {
        let totals = series.counts.setting_totals();
        let points: Vec<ScanPoint> = totals
            .iter()
            .enumerate()
            .map(|(k, c)| ScanPoint {
                delta: cfg.setting(k).delta(),
                counts: *c,
            })
            .collect();
        angle_scan_curves(&points, cfg.analysis.phase_tolerance).ok()
    } else {
        None
    };

    let grid = series.grid;
    let off_start = plateau
        .as_ref()
        .map_or(grid.n_slots, |p| p.in_pulse.last + 1 + (40_000 / grid.slot_ps as usize).max(1));
    let off_coinc: u64 = series
        .counts
        .coinc
        .iter()
        .flat_map(|t| t.iter().skip(off_start))
        .map(|c| c.iter().sum::<u64>())
        .sum();
    let runs = acc.runs_used.max(1) as f64;
    let plan = cfg.pulse_plan();
    let expected_per_run = accidental_estimate(
        2.0 * cfg.station_a.dark_rate,
        2.0 * cfg.station_b.dark_rate,
        2.0 * cfg.analysis.window,
        plan.n_pulses as f64 * plan.mean_period(),
    );
    let off_span = grid.n_slots.saturating_sub(off_start) as f64 * grid.slot_width();
    let accidentals = Accidentals {
        expected_per_run,
        expected_off_pulse_per_run: expected_per_run * off_span / plan.mean_period(),
        observed_off_pulse_per_run: off_coinc as f64 / runs,
    };
    let (dt_mean, dt_sd) = acc.delta_t.moments();
    let delta_t = DeltaTStats {
        mean: dt_mean * 1e-12,
        sd: dt_sd * 1e-12,
        expected_sd: truncated_normal_sd(delta_t_sigma(cfg), cfg.analysis.window),
    };
    let summary = AnalysisSummary {
        schema: SUMMARY_SCHEMA.to_string(),
        session_id: cfg.session_id(),
        status: if acc.skipped.is_empty() {
            SummaryStatus::Ok
        } else {
            SummaryStatus::Degraded
        },
        runs_used: acc.runs_used,
        runs_glitched: acc.runs_glitched,
        skipped: acc.skipped.clone(),
        geometry,
        slot_width: grid.slot_width(),
        n_slots: grid.n_slots,
        expected,
        plateau,
        product_bound,
        transient,
        scan,
        accidentals,
        delta_t,
        singles_totals: series.counts.singles_totals(),
        coincidence_totals: series.counts.setting_totals(),
        off_grid: series.counts.off_grid,
        sync: acc
            .sync
            .iter()
            .map(|(index, report)| RunSync {
                index: *index,
                report: report.clone(),
            })
            .collect(),
    };
    Ok((summary, series))
}

/// Spread of B − A arrival differences of true pairs: both detector
/// jitters plus the clock jitter of both trigger and detection tags.
pub fn delta_t_sigma(cfg: &ExperimentConfig) -> f64 {
    (cfg.station_a.detector_jitter_sigma.powi(2)
        + cfg.station_b.detector_jitter_sigma.powi(2)
        + 2.0 * cfg.station_a.clock.jitter_sigma.powi(2)
        + 2.0 * cfg.station_b.clock.jitter_sigma.powi(2))
    .sqrt()
}

/// Standard deviation of a centred normal of width `sigma` cut to `[−a, a]`.
pub fn truncated_normal_sd(sigma: f64, a: f64) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let k = a / sigma;
    let mass = statrs::function::erf::erf(k / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * k * k).exp() / (2.0 * std::f64::consts::PI).sqrt();
    sigma * (1.0 - 2.0 * k * pdf / mass).max(0.0).sqrt()
}

/// Analyzes manifests and writes series, summary, tables and Δt histogram.
pub fn cmd_analyze(manifests: &[(RunManifest, PathBuf)], out_dir: &Path) -> Result<AnalysisSummary, PipelineError> {
    let (cfg, acc) = analyze_manifests(manifests)?;
    let (summary, series) = summarize(&cfg, &acc)?;
    write_outputs(&summary, &series, &acc, out_dir)?;
    Ok(summary)
}

pub fn write_outputs(
    summary: &AnalysisSummary,
    series: &SlotSeries,
    acc: &SessionAccumulator,
    out_dir: &Path,
) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let create = |name: &str| {
        let p = out_dir.join(name);
        fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| PipelineError::io(&p, e))
    };
    series.write_csv(create(SERIES_FILE)?)?;
    acc.delta_t.write_csv(create(DELTA_T_FILE)?)?;
    let tables: Vec<CoincidenceTable> = series
        .counts
        .coinc
        .iter()
        .enumerate()
        .map(|(k, per_slot)| {
            let mut t = CoincidenceTable::new(k, None);
            for c in per_slot {
                for i in 0..4 {
                    t.counts[i] += c[i];
                }
            }
            t
        })
        .collect();
    let tables_path = out_dir.join(TABLES_FILE);
    fs::write(
        &tables_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "schema": "strobe.tables/1",
            "session_id": summary.session_id,
            "outcomes": crate::model::OutcomePair::ALL.map(|p| p.label()),
            "tables": tables,
        }))? + "\n",
    )
    .map_err(|e| PipelineError::io(&tables_path, e))?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    fs::write(&summary_path, serde_json::to_string_pretty(summary)? + "\n").map_err(|e| PipelineError::io(&summary_path, e))?;
    Ok(())
}

