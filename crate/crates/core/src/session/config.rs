use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Detector;
use crate::grid::SlotGrid;
use crate::model::{
    visibility_from_contrast, AngleSetting, Geometry, ModelError, QmStateModel, SettingsQuad, TransientMode,
    TransientModel,
};
use crate::sim::{ClockModel, FmPattern, PulsePlan, SimError, SourceConfig, StationConfig};
use crate::sync::AlignConfig;
use crate::s_to_ps;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometrySection {
    /// Straight-line distance between the stations, metres.
    pub distance_m: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self { distance_m: 24.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseSection {
    pub base_period: f64,
    pub pulse_duration: f64,
    pub rise_time: f64,
    pub fall_time: f64,
    pub fm_pattern: FmPattern,
}

impl Default for PulseSection {
    fn default() -> Self {
        let p = PulsePlan::default();
        Self {
            base_period: p.base_period,
            pulse_duration: p.pulse_duration,
            rise_time: p.rise_time,
            fall_time: p.fall_time,
            fm_pattern: p.fm_pattern,
        }
    }
}

/// Transient parameters in units of the light time `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransientSection {
    pub mode: TransientMode,
    pub theta_over_tau: f64,
    pub osc_period_over_tau: f64,
    pub floor_product: f64,
    pub eta_share: f64,
}

impl Default for TransientSection {
    fn default() -> Self {
        Self {
            mode: TransientMode::None,
            theta_over_tau: 1.0,
            osc_period_over_tau: 3.0,
            floor_product: 2.0,
            eta_share: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceSection {
    /// Polarizer contrast; sets the fringe visibility unless `visibility` is given.
    pub contrast: f64,
    pub visibility: Option<f64>,
    pub pair_yield: f64,
    pub visibility_drift: f64,
    pub phase_offset: f64,
    pub carry_over: f64,
    pub transient: TransientSection,
}

impl Default for SourceSection {
    fn default() -> Self {
        let s = SourceConfig::default();
        Self {
            contrast: 100.0,
            visibility: None,
            pair_yield: s.pair_yield,
            visibility_drift: s.visibility_drift,
            phase_offset: s.phase_offset,
            carry_over: s.carry_over,
            transient: TransientSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    /// The four CHSH settings, cycled.
    #[default]
    Chsh4,
    /// 34 analyzer angles at station B.
    Scan34,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSection {
    pub mode: SessionMode,
    /// Seconds of recording per run.
    pub run_duration: f64,
    /// Runs per setting.
    pub repeats: usize,
    /// Idle time between runs, seconds.
    pub dead_time: f64,
    /// True time of the first run's first pulse, seconds.
    pub clock_epoch: f64,
    /// Each station starts recording after a random number of pulses up to this.
    pub max_start_skew: usize,
    pub glitch_probability: f64,
    /// Overrides the pulse count derived from `run_duration`.
    pub pulses_per_run: Option<usize>,
    /// Stops the session after this many runs.
    pub max_runs: Option<usize>,
    pub settings: SettingsQuad,
    pub scan_angles: usize,
    /// Station A angle during a scan.
    pub scan_alpha: f64,
}

impl Default for SessionSection {
    fn default() -> Self {
        Self {
            mode: SessionMode::Chsh4,
            run_duration: 30.0,
            repeats: 8,
            dead_time: 82.5,
            clock_epoch: 1.0,
            max_start_skew: 1000,
            glitch_probability: 0.0,
            pulses_per_run: None,
            max_runs: None,
            settings: SettingsQuad::default(),
            scan_angles: 34,
            scan_alpha: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    pub slot_width: f64,
    pub window: f64,
    pub k_sigma: f64,
    pub min_coincidences: u64,
    pub headline: Detector,
    /// Bin width of the Δt histogram, seconds.
    pub dt_bin: f64,
    /// Phase beyond which a scan is reported as shifted, radians.
    pub phase_tolerance: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            slot_width: 4e-9,
            window: 4e-9,
            k_sigma: 3.0,
            min_coincidences: 1000,
            headline: Detector::APlus,
            dt_bin: 100e-12,
            phase_tolerance: 0.02,
        }
    }
}

fn default_station_b() -> StationConfig {
    StationConfig {
        clock: ClockModel {
            offset: 1e-3,
            drift_rate: 5e-6,
            jitter_sigma: 10e-12,
        },
        ..StationConfig::default()
    }
}

/// Everything needed to simulate and analyze one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Defaults to one derived from the seed.
    pub session_id: Option<String>,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub geometry: GeometrySection,
    pub pulse: PulseSection,
    pub source: SourceSection,
    pub station_a: StationConfig,
    pub station_b: StationConfig,
    pub session: SessionSection,
    pub analysis: AnalysisSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            session_id: None,
            workers: 1,
            output_dir: PathBuf::from("strobe-out"),
            geometry: GeometrySection::default(),
            pulse: PulseSection::default(),
            source: SourceSection::default(),
            station_a: StationConfig::default(),
            station_b: default_station_b(),
            session: SessionSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `dotted.key=value` overrides; values are parsed as TOML, with
    /// bare words taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.to_string()))?;
            let value = parse_value(raw.trim());
            let mut node = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Override(o.to_string()))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        Ok(root.try_into()?)
    }

    pub fn session_id(&self) -> String {
        self.session_id.clone().unwrap_or_else(|| format!("session-{:016x}", self.seed))
    }

    pub fn geometry(&self) -> Result<Geometry, ConfigError> {
        Ok(Geometry::new(self.geometry.distance_m)?)
    }

    pub fn visibility(&self) -> Result<f64, ConfigError> {
        match self.source.visibility {
            Some(v) => Ok(QmStateModel::new(v)?.visibility()),
            None => Ok(visibility_from_contrast(self.source.contrast)?),
        }
    }

    pub fn state(&self) -> Result<QmStateModel, ConfigError> {
        Ok(QmStateModel::new(self.visibility()?)?)
    }

    pub fn transient(&self) -> Result<TransientModel, ConfigError> {
        let t = &self.source.transient;
        let tau = self.geometry()?.tau;
        let m = TransientModel {
            mode: t.mode,
            tau,
            theta: t.theta_over_tau * tau,
            osc_period: t.osc_period_over_tau * tau,
            floor_product: t.floor_product,
            eta_share: t.eta_share,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn source_config(&self) -> Result<SourceConfig, ConfigError> {
        let s = &self.source;
        Ok(SourceConfig {
            pair_yield: s.pair_yield,
            visibility_drift: s.visibility_drift,
            phase_offset: s.phase_offset,
            carry_over: s.carry_over,
            transient: self.transient()?,
        })
    }

    /// Pulse plan of one run.
    pub fn pulse_plan(&self) -> PulsePlan {
        let p = &self.pulse;
        let mut plan = PulsePlan {
            base_period: p.base_period,
            pulse_duration: p.pulse_duration,
            rise_time: p.rise_time,
            fall_time: p.fall_time,
            n_pulses: 1,
            fm_pattern: p.fm_pattern.clone(),
        };
        plan.n_pulses = self
            .session
            .pulses_per_run
            .unwrap_or_else(|| plan.pulses_in(self.session.run_duration));
        plan
    }

    pub fn n_settings(&self) -> usize {
        match self.session.mode {
            SessionMode::Chsh4 => 4,
            SessionMode::Scan34 => self.session.scan_angles,
        }
    }

    pub fn n_runs(&self) -> usize {
        let n = self.n_settings() * self.session.repeats;
        self.session.max_runs.map_or(n, |m| m.min(n))
    }

    pub fn setting(&self, label: usize) -> AngleSetting {
        match self.session.mode {
            SessionMode::Chsh4 => self.session.settings.settings()[label],
            SessionMode::Scan34 => AngleSetting::new(
                self.session.scan_alpha,
                label as f64 * std::f64::consts::PI / self.session.scan_angles as f64,
            ),
        }
    }

    /// Cyclic: run `r` uses setting `r mod n_settings`.
    pub fn setting_label(&self, run: usize) -> usize {
        run % self.n_settings()
    }

    /// Slot grid spanning the longest period, so every detection of a pulse lands on it.
    pub fn slot_grid(&self) -> Result<SlotGrid, ConfigError> {
        let period = self.pulse_plan().max_period_ps();
        SlotGrid::new(s_to_ps(self.analysis.slot_width) as u64, period).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig::for_plan(&self.pulse_plan())
    }

    /// Fair-sampling efficiency expected for detector `d`: the partner
    /// station's detection efficiency times the fraction of true pairs
    /// falling inside the coincidence window.
    pub fn eta0(&self, d: Detector) -> f64 {
        let partner = match d {
            Detector::APlus | Detector::AMinus => &self.station_b,
            _ => &self.station_a,
        };
        let var = self.station_a.detector_jitter_sigma.powi(2)
            + self.station_b.detector_jitter_sigma.powi(2)
            + 2.0 * self.station_a.clock.jitter_sigma.powi(2)
            + 2.0 * self.station_b.clock.jitter_sigma.powi(2);
        let acceptance = if var > 0.0 {
            statrs::function::erf::erf(self.analysis.window / (2.0 * var).sqrt())
        } else {
            1.0
        };
        partner.detector_efficiency * acceptance
    }

    /// Visibility averaged over the session's drift.
    pub fn mean_visibility(&self) -> Result<f64, ConfigError> {
        let v = self.visibility()?;
        let n = self.n_runs().max(1);
        let mean_h = (0..n).map(|r| self.run_start(r) + 0.5 * self.session.run_duration).sum::<f64>() / n as f64 / 3600.0;
        Ok(v * (1.0 - self.source.visibility_drift * mean_h))
    }

    /// Session time at which run `r` starts, seconds.
    pub fn run_start(&self, r: usize) -> f64 {
        r as f64 * (self.session.run_duration + self.session.dead_time)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let plan = self.pulse_plan();
        plan.validate()?;
        plan.validate_for_tau(self.geometry()?.tau)?;
        self.source_config()?.validate()?;
        self.station_a.validate()?;
        self.station_b.validate()?;
        self.state()?;
        self.session.settings.validate()?;
        self.slot_grid()?;
        if self.n_runs() == 0 {
            return Err(ConfigError::Invalid("session has no runs".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if !(self.session.run_duration > 0.0) || !(self.session.dead_time >= 0.0) {
            return Err(ConfigError::Invalid("run_duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.session.glitch_probability) {
            return Err(ConfigError::Invalid("glitch_probability must lie in [0, 1]".into()));
        }
        if self.session.max_start_skew >= plan.n_pulses {
            return Err(ConfigError::Invalid("max_start_skew exceeds the run length".into()));
        }
        if !(self.analysis.window > 0.0) || !(self.analysis.k_sigma > 0.0) || !(self.analysis.dt_bin > 0.0) {
            return Err(ConfigError::Invalid("window, k_sigma and dt_bin must be positive".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headline_defaults() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.geometry.distance_m, 24.0);
        assert_eq!(c.pulse.pulse_duration, 500e-9);
        assert_eq!(c.pulse.base_period, 2e-6);
        assert_eq!(c.analysis.slot_width, 4e-9);
        assert_eq!(c.analysis.window, 4e-9);
        assert_eq!(c.session.run_duration, 30.0);
        assert_eq!(c.n_runs(), 32);
        assert!((c.visibility().unwrap() - 0.980198).abs() < 1e-6);
        let g = c.slot_grid().unwrap();
        assert_eq!(g.n_slots, 510);
        // 0.12·erf(w/√(2(2σd² + 4σc²))) with σd = 2 ns, σc = 10 ps
        assert!((c.eta0(Detector::APlus) - 0.101_122_85).abs() < 1e-8);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        let partial = ExperimentConfig::from_toml_str("seed = 9\n[session]\nrepeats = 2\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.n_runs(), 8);
        assert_eq!(partial.station_b.clock.offset, 1e-3);
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::default()
            .with_overrides(&[
                "session.repeats=1",
                "source.transient.mode=monotone",
                "analysis.headline=B-",
                "geometry.distance_m=1.5",
                "session.pulses_per_run=20000",
            ])
            .unwrap();
        assert_eq!(c.n_runs(), 4);
        assert_eq!(c.source.transient.mode, TransientMode::Monotone);
        assert_eq!(c.analysis.headline, Detector::BMinus);
        assert_eq!(c.pulse_plan().n_pulses, 20_000);
        assert!(c.with_overrides(&["nonsense"]).is_err());
        assert!(c.with_overrides(&["session.repeats=\"x\""]).is_err());
    }

    #[test]
    fn cyclic_settings_and_scan() {
        let c = ExperimentConfig::default();
        let labels: Vec<usize> = (0..32).map(|r| c.setting_label(r)).collect();
        for s in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == s).count(), 8);
        }
        assert_eq!(&labels[..5], &[0, 1, 2, 3, 0]);
        assert!(c.with_overrides(&["session.mode=scan", "session.repeats=1"]).is_err());
        let scan = c.with_overrides(&["session.mode=scan34", "session.repeats=1"]).unwrap();
        assert_eq!(scan.n_runs(), 34);
        assert!((scan.setting(17).beta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn too_short_pulse_for_long_baseline() {
        let c = ExperimentConfig::default().with_overrides(&["geometry.distance_m=40.0"]).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Sim(SimError::PulseTooShort { .. }))));
    }
}
