//! Physics of the pulsed polarization-entangled source.
//!
//! Joint outcome probabilities for the φ+ state with a symmetric visibility
//! loss, the CHSH combination, the product bound `S·η ≤ 2` and the
//! parametric transient families injected by the simulator.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Quantum maximum of the CHSH combination, 2√2.
pub const TSIRELSON_BOUND: f64 = 2.0 * SQRT_2;

/// Local-realist bound on the CHSH combination and on the product `S·η`.
pub const CLASSICAL_BOUND: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("visibility {0} outside [0, 1]")]
    InvalidVisibility(f64),
    #[error("polarizer contrast {0} must be greater than 1")]
    InvalidContrast(f64),
    #[error("coincidence-probability gap {0} must be positive")]
    InvalidGap(f64),
    #[error("k_sigma {0} must be positive")]
    InvalidSigma(f64),
    #[error("distance {0} m must be positive and finite")]
    InvalidDistance(f64),
    #[error("settings quad repeats the pair ({0}, {1})")]
    DegenerateQuad(f64, f64),
    #[error("invalid transient model: {0}")]
    InvalidTransient(&'static str),
}

/// Analyzer orientations at the two stations, radians in `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSetting {
    pub alpha: f64,
    pub beta: f64,
}

impl AngleSetting {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha: normalize_angle(alpha),
            beta: normalize_angle(beta),
        }
    }

    /// `α − β`, the only combination the φ+ statistics depend on.
    pub fn delta(&self) -> f64 {
        self.alpha - self.beta
    }
}

/// Polarizer analysis is π-periodic.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// The four analyzer orientations of a CHSH test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingsQuad {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl Default for SettingsQuad {
    /// a = 0, a′ = π/4, b = π/8, b′ = 3π/8.
    fn default() -> Self {
        Self {
            a: 0.0,
            a_prime: PI / 4.0,
            b: PI / 8.0,
            b_prime: 3.0 * PI / 8.0,
        }
    }
}

impl SettingsQuad {
    /// Settings in label order `(a,b), (a,b′), (a′,b), (a′,b′)`.
    pub fn settings(&self) -> [AngleSetting; 4] {
        [
            AngleSetting::new(self.a, self.b),
            AngleSetting::new(self.a, self.b_prime),
            AngleSetting::new(self.a_prime, self.b),
            AngleSetting::new(self.a_prime, self.b_prime),
        ]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let s = self.settings();
        for i in 0..4 {
            for j in (i + 1)..4 {
                if (s[i].alpha - s[j].alpha).abs() < 1e-12 && (s[i].beta - s[j].beta).abs() < 1e-12 {
                    return Err(ModelError::DegenerateQuad(s[i].alpha, s[i].beta));
                }
            }
        }
        Ok(())
    }
}

/// Output port of a polarization analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> f64 {
        match self {
            Outcome::Plus => 1.0,
            Outcome::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Outcome::Plus => '+',
            Outcome::Minus => '-',
        }
    }
}

/// Joint outcome of one coincidence: A-station port, B-station port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutcomePair {
    pub a: Outcome,
    pub b: Outcome,
}

impl OutcomePair {
    /// Table order used everywhere counts are stored: `++, +−, −+, −−`.
    pub const ALL: [OutcomePair; 4] = [
        OutcomePair { a: Outcome::Plus, b: Outcome::Plus },
        OutcomePair { a: Outcome::Plus, b: Outcome::Minus },
        OutcomePair { a: Outcome::Minus, b: Outcome::Plus },
        OutcomePair { a: Outcome::Minus, b: Outcome::Minus },
    ];

    pub fn new(a: Outcome, b: Outcome) -> Self {
        Self { a, b }
    }

    pub fn index(self) -> usize {
        match (self.a, self.b) {
            (Outcome::Plus, Outcome::Plus) => 0,
            (Outcome::Plus, Outcome::Minus) => 1,
            (Outcome::Minus, Outcome::Plus) => 2,
            (Outcome::Minus, Outcome::Minus) => 3,
        }
    }

    /// `oa·ob`.
    pub fn parity(self) -> f64 {
        self.a.sign() * self.b.sign()
    }

    pub fn label(self) -> String {
        format!("{}{}", self.a.symbol(), self.b.symbol())
    }
}

/// φ+ state with a symmetric fringe visibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmStateModel {
    visibility: f64,
}

impl QmStateModel {
    /// Each analyzer port fires with probability ½ regardless of settings.
    pub const SINGLES_MARGINAL: f64 = 0.5;

    pub fn new(visibility: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(ModelError::InvalidVisibility(visibility));
        }
        Ok(Self { visibility })
    }

    pub fn visibility(&self) -> f64 {
        self.visibility
    }
}

/// `P(oa, ob) = ¼·[1 + oa·ob·V·cos 2(α − β)]`.
pub fn qm_joint_prob(pair: OutcomePair, setting: AngleSetting, model: &QmStateModel) -> f64 {
    joint_prob(pair, setting.delta(), model.visibility)
}

pub(crate) fn joint_prob(pair: OutcomePair, delta: f64, visibility: f64) -> f64 {
    0.25 * (1.0 + pair.parity() * visibility * (2.0 * delta).cos())
}

/// Correlator predicted for the φ+ state, `V·cos 2(α − β)`.
pub fn qm_correlation(setting: AngleSetting, model: &QmStateModel) -> f64 {
    model.visibility * (2.0 * setting.delta()).cos()
}

/// Saw-tooth local-hidden-variable `++` coincidence probability.
///
/// `½·(1 − 2|Δ|/π)` on `[−π/2, π/2]`, extended π-periodically. It coincides
/// with the quantum curve `½cos²Δ` at Δ = 0, π/4 and π/2.
pub fn classical_coincidence_prob(delta: f64) -> f64 {
    let d = (delta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    0.5 * (1.0 - 2.0 * d.abs() / PI)
}

/// Quantum `++` coincidence probability at unit visibility, `½cos²Δ`.
pub fn qm_coincidence_prob(delta: f64) -> f64 {
    0.5 * delta.cos().powi(2)
}

/// `|P_qm(Δ) − P_cl(Δ)|`.
pub fn coincidence_gap(delta: f64) -> f64 {
    (qm_coincidence_prob(delta) - classical_coincidence_prob(delta)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    /// Largest quantum/classical coincidence-probability difference.
    pub max_gap: f64,
    /// Angle differences in `[0, π/2)` where it is attained.
    pub at: [f64; 2],
    /// The gap at the CHSH-optimal differences π/8 and 3π/8.
    pub at_chsh_settings: [f64; 2],
}

/// Maximum quantum/classical coincidence-probability gap.
///
/// The gap `¼(cos 2Δ − 1 + 4Δ/π)` is stationary where `sin 2Δ = 2/π`.
pub fn qm_classical_gap() -> GapReport {
    let first = 0.5 * (2.0 / PI).asin();
    let second = FRAC_PI_2 - first;
    GapReport {
        max_gap: coincidence_gap(first),
        at: [first, second],
        at_chsh_settings: [coincidence_gap(PI / 8.0), coincidence_gap(3.0 * PI / 8.0)],
    }
}

/// Smallest `N` for which `gap·N ≥ k_sigma·√N`, i.e. `⌈(k_sigma/gap)²⌉`.
pub fn min_counts_for_gap(gap: f64, k_sigma: f64) -> Result<u64, ModelError> {
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(ModelError::InvalidGap(gap));
    }
    if !(k_sigma > 0.0) || !k_sigma.is_finite() {
        return Err(ModelError::InvalidSigma(k_sigma));
    }
    Ok((k_sigma / gap).powi(2).ceil() as u64)
}

/// Fringe visibility from an extinction ratio `C:1`, `(C − 1)/(C + 1)`.
pub fn visibility_from_contrast(contrast: f64) -> Result<f64, ModelError> {
    if contrast.is_nan() || contrast <= 1.0 {
        return Err(ModelError::InvalidContrast(contrast));
    }
    if contrast.is_infinite() {
        return Ok(1.0);
    }
    Ok((contrast - 1.0) / (contrast + 1.0))
}

/// Best CHSH value reachable at visibility `V`: `2√2·V`.
pub fn chsh_ideal(visibility: f64) -> f64 {
    TSIRELSON_BOUND * visibility
}

/// `E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)`, reported as a magnitude.
pub fn chsh_combination(e: [f64; 4]) -> f64 {
    (e[0] - e[1] + e[2] + e[3]).abs()
}

/// Sign applied to each correlator in [`chsh_combination`].
pub const CHSH_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];

/// Straight-line separation of the stations and the light time across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub distance_straight_line: f64,
    pub tau: f64,
}

impl Geometry {
    pub fn new(distance_m: f64) -> Result<Self, ModelError> {
        if !(distance_m > 0.0) || !distance_m.is_finite() {
            return Err(ModelError::InvalidDistance(distance_m));
        }
        Ok(Self {
            distance_straight_line: distance_m,
            tau: distance_m / SPEED_OF_LIGHT,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransientMode {
    #[default]
    None,
    Monotone,
    Oscillatory,
}

/// Parametric transient deviation from the quantum prediction.
///
/// For `t ≤ tau` the correlation visibility and the (fair-sampling)
/// efficiency are suppressed just enough that `S·η` sits at
/// `floor_product`. Afterwards the suppression relaxes with timescale
/// `theta`, either exponentially or as a damped cosine of period
/// `osc_period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientModel {
    pub mode: TransientMode,
    pub tau: f64,
    pub theta: f64,
    pub osc_period: f64,
    pub floor_product: f64,
    /// Fraction of the (logarithmic) suppression carried by η instead of S.
    pub eta_share: f64,
}

impl TransientModel {
    pub fn none() -> Self {
        Self {
            mode: TransientMode::None,
            tau: 0.0,
            theta: 0.0,
            osc_period: 0.0,
            floor_product: CLASSICAL_BOUND,
            eta_share: 0.0,
        }
    }

    pub fn monotone(tau: f64, theta: f64) -> Self {
        Self {
            mode: TransientMode::Monotone,
            tau,
            theta,
            osc_period: 0.0,
            floor_product: CLASSICAL_BOUND,
            eta_share: 0.0,
        }
    }

    pub fn oscillatory(tau: f64, theta: f64, osc_period: f64) -> Self {
        Self {
            mode: TransientMode::Oscillatory,
            tau,
            theta,
            osc_period,
            floor_product: CLASSICAL_BOUND,
            eta_share: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.mode == TransientMode::None {
            return Ok(());
        }
        if !(self.tau > 0.0) {
            return Err(ModelError::InvalidTransient("tau must be positive"));
        }
        if !(self.theta > 0.0) {
            return Err(ModelError::InvalidTransient("theta must be positive"));
        }
        if !(self.floor_product > 0.0) {
            return Err(ModelError::InvalidTransient("floor_product must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eta_share) {
            return Err(ModelError::InvalidTransient("eta_share must lie in [0, 1]"));
        }
        if self.mode == TransientMode::Oscillatory && !(self.osc_period > self.tau) {
            return Err(ModelError::InvalidTransient("osc_period must exceed tau"));
        }
        Ok(())
    }

    /// Relative size of the deviation at time `t`: 1 up to `tau`, then relaxing.
    fn deviation_weight(&self, t: f64) -> f64 {
        if t <= self.tau {
            return 1.0;
        }
        let dt = t - self.tau;
        let envelope = (-dt / self.theta).exp();
        match self.mode {
            TransientMode::None => 0.0,
            TransientMode::Monotone => envelope,
            TransientMode::Oscillatory => envelope * (2.0 * PI * dt / self.osc_period).cos(),
        }
    }
}

impl Default for TransientModel {
    fn default() -> Self {
        Self::none()
    }
}

/// Multipliers applied to the correlation visibility and to the detection
/// efficiency at one instant of the pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientFactors {
    pub s_factor: f64,
    pub eta_factor: f64,
}

impl TransientFactors {
    pub const UNITY: TransientFactors = TransientFactors {
        s_factor: 1.0,
        eta_factor: 1.0,
    };
}

/// Transient multipliers at `t` seconds after the pulse start.
///
/// `eta0` is the efficiency the bound is evaluated against; the quantum
/// product `2√2·V·eta0` is scaled down to `floor_product` while `t ≤ tau`.
pub fn transient_factors(t: f64, model: &TransientModel, eta0: f64, visibility: f64) -> TransientFactors {
    if model.mode == TransientMode::None {
        return TransientFactors::UNITY;
    }
    let qm_product = TSIRELSON_BOUND * visibility * eta0;
    let required = if qm_product > model.floor_product {
        model.floor_product / qm_product
    } else {
        1.0
    };
    let s_floor = required.powf(1.0 - model.eta_share);
    let eta_floor = required.powf(model.eta_share);
    let w = model.deviation_weight(t.max(0.0));
    TransientFactors {
        s_factor: 1.0 - (1.0 - s_floor) * w,
        eta_factor: 1.0 - (1.0 - eta_floor) * w,
    }
}
