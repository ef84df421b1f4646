//! Two-station time-tag generator.
//!
//! One call to [`emit_events`] produces the raw tag streams of both
//! stations for one run: FM-numbered triggers, photon detections from
//! entangled pairs (with optional transient deviation), dark counts, and
//! each station's own drifting clock.
//!
//! Randomness is split into independent ChaCha streams per purpose (pair
//! source, station A, station B, and their clocks) derived from the run
//! seed, so the output depends on nothing but `(configs, seed)`.

mod clock;
mod pattern;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{apply_clock, apply_dead_time, ClockModel, TrueEvent};
pub use pattern::{generate_trigger_train, prbs7, FmPattern, PulseEnvelope, PulsePlan, TriggerTrain, PRBS7_LEN};

use crate::model::{transient_factors, AngleSetting, ModelError, Outcome, QmStateModel, TransientModel};
use crate::{Channel, TimeTag};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("pulse duration {duration} s is shorter than 5·tau (tau = {tau} s)")]
    PulseTooShort { duration: f64, tau: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Detector and timing parameters of one station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationConfig {
    /// Collection times quantum efficiency of each detector.
    pub detector_efficiency: f64,
    /// Dark counts per second per detector.
    pub dark_rate: f64,
    pub detector_jitter_sigma: f64,
    /// Latency of the detection path relative to the trigger tag:
    /// a photon emitted at the pulse start is tagged `trigger + trigger_delay`.
    pub trigger_delay: f64,
    /// Per-detector dead time; 0 disables it.
    pub dead_time: f64,
    pub clock: ClockModel,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            detector_efficiency: 0.12,
            dark_rate: 200.0,
            detector_jitter_sigma: 2e-9,
            trigger_delay: 57e-9,
            dead_time: 0.0,
            clock: ClockModel {
                offset: 0.0,
                drift_rate: 0.0,
                jitter_sigma: 10e-12,
            },
        }
    }
}

impl StationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(SimError::Config(format!(
                "detector_efficiency {} outside [0, 1]",
                self.detector_efficiency
            )));
        }
        if !(self.dark_rate >= 0.0) || !(self.detector_jitter_sigma >= 0.0) || !(self.clock.jitter_sigma >= 0.0) {
            return Err(SimError::Config("rates and jitters must be non-negative".into()));
        }
        if !(self.dead_time >= 0.0) {
            return Err(SimError::Config("dead_time must be non-negative".into()));
        }
        if self.clock.drift_rate.abs() >= 1e-3 {
            return Err(SimError::Config("clock drift must stay below 1e-3".into()));
        }
        Ok(())
    }
}

/// Pair source parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    /// Mean number of emitted pairs per pulse.
    pub pair_yield: f64,
    /// Fractional loss of visibility per hour of session time.
    pub visibility_drift: f64,
    /// Residual birefringence rotation, radians; enters as `cos 2(α − β − φ)`.
    pub phase_offset: f64,
    /// Fraction of the transient clock carried from one pulse to the next.
    /// 0 means every pulse starts from the same ground state.
    pub carry_over: f64,
    pub transient: TransientModel,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            // ≈2% of pulses with a detection at each station for the default station
            pair_yield: 0.1617,
            visibility_drift: 0.006,
            phase_offset: 0.0,
            carry_over: 0.0,
            transient: TransientModel::none(),
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.pair_yield >= 0.0) || !self.pair_yield.is_finite() {
            return Err(SimError::Config("pair_yield must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.carry_over) {
            return Err(SimError::Config("carry_over must lie in [0, 1)".into()));
        }
        if !(self.visibility_drift >= 0.0) {
            return Err(SimError::Config("visibility_drift must be non-negative".into()));
        }
        self.transient.validate()?;
        Ok(())
    }
}

/// Where a run sits in the session.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunContext {
    /// Start of the run since the session began, seconds (drives visibility drift).
    pub session_time: f64,
    /// Absolute true time of the run's first pulse, seconds (drives the clocks).
    pub clock_origin: f64,
    /// Leading pulses each station misses before its TDC starts recording.
    pub skip_pulses: [usize; 2],
}

const STREAM_SOURCE: u64 = 1;
const STREAM_STATION: [u64; 2] = [2, 3];
const STREAM_CLOCK: [u64; 2] = [4, 5];
const STREAM_DARK: [u64; 2] = [6, 7];

/// SplitMix64 of `master` mixed with `stream`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

/// Simulates one run and returns the local-clock tag streams of A and B.
///
/// The number of pairs per pulse is Poisson(`pair_yield`); this is drawn
/// as one Poisson total with pairs placed uniformly over the pulses, which
/// has the same distribution. Each pair gets an emission time under the
/// pump envelope, a joint outcome from the φ+ statistics at the
/// (drifted, transient-scaled) visibility, and an independent detection
/// decision per photon.
pub fn emit_events(
    plan: &PulsePlan,
    source: &SourceConfig,
    stations: [&StationConfig; 2],
    setting: AngleSetting,
    model: &QmStateModel,
    ctx: &RunContext,
    seed: u64,
) -> Result<(Vec<TimeTag>, Vec<TimeTag>), SimError> {
    source.validate()?;
    for s in stations {
        s.validate()?;
    }
    let train = generate_trigger_train(plan)?;
    let n = plan.n_pulses;
    for &skip in &ctx.skip_pulses {
        if skip >= n {
            return Err(SimError::Config(format!("skip of {skip} pulses leaves nothing of {n}")));
        }
    }
    let envelope = PulseEnvelope::from_plan(plan);
    let starts: Vec<f64> = train.starts_seconds();

    let mut src = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SOURCE));
    let mut st = STREAM_STATION.map(|k| ChaCha8Rng::seed_from_u64(derive_seed(seed, k)));
    let jitter = stations.map(|s| normal(s.detector_jitter_sigma));

    let mean_pairs = source.pair_yield * n as f64;
    let n_pairs = if mean_pairs > 0.0 {
        Poisson::new(mean_pairs).expect("positive mean").sample(&mut src) as usize
    } else {
        0
    };
    let mut pair_pulses: Vec<u32> = (0..n_pairs).map(|_| src.random_range(0..n) as u32).collect();
    pair_pulses.sort_unstable();

    let ages = transient_ages(plan, source.carry_over);
    let v0 = model.visibility();
    let cos2 = (2.0 * (setting.delta() - source.phase_offset)).cos();

    let window: [(f64, f64); 2] = ctx.skip_pulses.map(|skip| {
        (
            starts[skip] - 0.5 * plan.base_period,
            starts[n - 1] + plan.max_period(),
        )
    });

    let mut events: [Vec<TrueEvent>; 2] = [Vec::new(), Vec::new()];
    for (s, ev) in events.iter_mut().enumerate() {
        ev.reserve(n - ctx.skip_pulses[s] + (mean_pairs * stations[s].detector_efficiency * 1.2) as usize);
        ev.extend(starts[ctx.skip_pulses[s]..].iter().map(|&t| TrueEvent {
            channel: Channel::Trigger,
            time: t,
        }));
    }

    for &k in &pair_pulses {
        let k = k as usize;
        let start = starts[k];
        let t_e = envelope.sample(src.random());
        let age = ages.as_ref().map_or(0.0, |a| a[k]);
        let wall = ctx.session_time + start + t_e;
        let v_wall = (v0 * (1.0 - source.visibility_drift * wall / 3600.0)).max(0.0);
        let f = transient_factors(t_e + age, &source.transient, 1.0, v_wall);
        let v_eff = (v_wall * f.s_factor).clamp(0.0, 1.0);

        let a = if src.random::<bool>() { Outcome::Plus } else { Outcome::Minus };
        let same = src.random::<f64>() < 0.5 * (1.0 + v_eff * cos2);
        let b = if same { a } else { a.flip() };

        for (s, outcome) in [(0usize, a), (1usize, b)] {
            let cfg = stations[s];
            let p = (cfg.detector_efficiency * f.eta_factor).clamp(0.0, 1.0);
            let u: f64 = st[s].random();
            let dt = jitter[s].as_ref().map_or(0.0, |d| d.sample(&mut st[s]));
            let t = start + t_e + cfg.trigger_delay + dt;
            if u < p && k >= ctx.skip_pulses[s] && t >= window[s].0 && t < window[s].1 {
                events[s].push(TrueEvent {
                    channel: Channel::for_detector(outcome),
                    time: t,
                });
            }
        }
    }

    for s in 0..2 {
        let (lo, hi) = window[s];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DARK[s]));
        let mean = stations[s].dark_rate * (hi - lo);
        for channel in [Channel::DetPlus, Channel::DetMinus] {
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize;
            events[s].extend((0..count).map(|_| TrueEvent {
                channel,
                time: rng.random_range(lo..hi),
            }));
        }
    }

    let [ev_a, ev_b] = events;
    let tags_a = apply_dead_time(
        apply_clock(&ev_a, &stations[0].clock, ctx.clock_origin, derive_seed(seed, STREAM_CLOCK[0])),
        stations[0].dead_time,
    );
    let tags_b = apply_dead_time(
        apply_clock(&ev_b, &stations[1].clock, ctx.clock_origin, derive_seed(seed, STREAM_CLOCK[1])),
        stations[1].dead_time,
    );
    Ok((tags_a, tags_b))
}

/// Time already elapsed on the transient clock when each pulse starts.
fn transient_ages(plan: &PulsePlan, carry_over: f64) -> Option<Vec<f64>> {
    if carry_over <= 0.0 {
        return None;
    }
    let mut ages = Vec::with_capacity(plan.n_pulses);
    let mut age = 0.0;
    for k in 0..plan.n_pulses {
        ages.push(age);
        age = carry_over * (age + plan.period_ps(k) as f64 * 1e-12);
    }
    Some(ages)
}
