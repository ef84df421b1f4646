use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::s_to_ps;

/// Repetition-rate modulation used to number pulses at both stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FmPattern {
    /// Fixed repetition rate. Cannot be used for pulse numbering.
    Constant,
    /// PRBS7 (`x^7 + x^6 + 1`, all-ones seed). A 1 bit stretches the
    /// period by `stretch`; each bit holds for `bit_span` pulses.
    Prbs7 { bit_span: usize, stretch: f64 },
}

impl Default for FmPattern {
    fn default() -> Self {
        FmPattern::Prbs7 {
            bit_span: 100,
            stretch: 0.02,
        }
    }
}

/// Length of the PRBS7 sequence.
pub const PRBS7_LEN: usize = 127;

/// One full period of the PRBS7 sequence.
pub fn prbs7() -> &'static [bool; PRBS7_LEN] {
    static BITS: OnceLock<[bool; PRBS7_LEN]> = OnceLock::new();
    BITS.get_or_init(|| {
        let mut state: u8 = 0x7f;
        let mut bits = [false; PRBS7_LEN];
        for b in bits.iter_mut() {
            let fb = ((state >> 6) ^ (state >> 5)) & 1;
            state = ((state << 1) | fb) & 0x7f;
            *b = fb == 1;
        }
        bits
    })
}

impl FmPattern {
    /// Modulation bit in force for pulse `pulse` (counted from the train start).
    pub fn bit(&self, pulse: usize) -> bool {
        match *self {
            FmPattern::Constant => false,
            FmPattern::Prbs7 { bit_span, .. } => prbs7()[(pulse / bit_span.max(1)) % PRBS7_LEN],
        }
    }

    /// Pulses per repetition of the pattern.
    pub fn pattern_length(&self) -> Option<usize> {
        match *self {
            FmPattern::Constant => None,
            FmPattern::Prbs7 { bit_span, .. } => Some(bit_span * PRBS7_LEN),
        }
    }

    /// Pulses over which one modulation bit is held.
    pub fn bit_span(&self) -> usize {
        match *self {
            FmPattern::Constant => 1,
            FmPattern::Prbs7 { bit_span, .. } => bit_span,
        }
    }

    pub fn is_synchronizable(&self) -> bool {
        matches!(*self, FmPattern::Prbs7 { stretch, bit_span } if stretch != 0.0 && bit_span > 0)
    }

    fn stretch(&self) -> f64 {
        match *self {
            FmPattern::Constant => 0.0,
            FmPattern::Prbs7 { stretch, .. } => stretch,
        }
    }
}

/// Pump pulse train for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulsePlan {
    /// Unmodulated pulse-to-pulse period, seconds.
    pub base_period: f64,
    pub pulse_duration: f64,
    pub rise_time: f64,
    pub fall_time: f64,
    pub n_pulses: usize,
    pub fm_pattern: FmPattern,
}

impl Default for PulsePlan {
    fn default() -> Self {
        Self {
            base_period: 2e-6,
            pulse_duration: 500e-9,
            rise_time: 20e-9,
            fall_time: 20e-9,
            n_pulses: 1,
            fm_pattern: FmPattern::default(),
        }
    }
}

impl PulsePlan {
    /// The two periods the pattern switches between, picoseconds.
    pub fn period_table_ps(&self) -> [u64; 2] {
        let base = s_to_ps(self.base_period) as u64;
        let long = s_to_ps(self.base_period * (1.0 + self.fm_pattern.stretch())) as u64;
        [base, long]
    }

    /// Period following pulse `i`, picoseconds.
    pub fn period_ps(&self, i: usize) -> u64 {
        self.period_table_ps()[self.fm_pattern.bit(i) as usize]
    }

    pub fn min_period(&self) -> f64 {
        let [a, b] = self.period_table_ps();
        a.min(b) as f64 * 1e-12
    }

    pub fn max_period(&self) -> f64 {
        self.max_period_ps() as f64 * 1e-12
    }

    pub fn max_period_ps(&self) -> u64 {
        let [a, b] = self.period_table_ps();
        a.max(b)
    }

    /// Mean period over one pattern repetition, seconds.
    pub fn mean_period(&self) -> f64 {
        match self.fm_pattern.pattern_length() {
            None => self.base_period,
            Some(_) => {
                let ones = prbs7().iter().filter(|&&b| b).count() as f64;
                let [a, b] = self.period_table_ps();
                ((PRBS7_LEN as f64 - ones) * a as f64 + ones * b as f64) / PRBS7_LEN as f64 * 1e-12
            }
        }
    }

    pub fn duty_cycle(&self) -> f64 {
        self.pulse_duration / self.base_period
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_pulses == 0 {
            return Err(SimError::Config("n_pulses must be at least 1".into()));
        }
        if !(self.base_period > 0.0) || !(self.pulse_duration > 0.0) {
            return Err(SimError::Config("periods and durations must be positive".into()));
        }
        if self.rise_time < 0.0 || self.fall_time < 0.0 || self.rise_time + self.fall_time > self.pulse_duration {
            return Err(SimError::Config("rise + fall must fit inside the pulse".into()));
        }
        if let FmPattern::Prbs7 { bit_span, stretch } = self.fm_pattern {
            if bit_span == 0 || !(stretch > -1.0) {
                return Err(SimError::Config("invalid PRBS modulation".into()));
            }
        }
        if self.pulse_duration >= self.min_period() {
            return Err(SimError::Config(format!(
                "pulse duration {} s does not fit in the shortest period {} s",
                self.pulse_duration,
                self.min_period()
            )));
        }
        Ok(())
    }

    /// Pulses must last at least five light times across the setup.
    pub fn validate_for_tau(&self, tau: f64) -> Result<(), SimError> {
        if self.pulse_duration < 5.0 * tau {
            return Err(SimError::PulseTooShort {
                duration: self.pulse_duration,
                tau,
            });
        }
        Ok(())
    }

    /// Number of pulses whose start falls inside `duration` seconds.
    pub fn pulses_in(&self, duration: f64) -> usize {
        let limit = s_to_ps(duration).max(0) as u64;
        let mut t = 0u64;
        let mut n = 0usize;
        while t < limit {
            t += self.period_ps(n);
            n += 1;
        }
        n
    }
}

/// Pulse start times (run-relative, picoseconds) and their pattern bits.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerTrain {
    pub starts_ps: Vec<u64>,
    pub labels: Vec<bool>,
    pub synchronizable: bool,
}

impl TriggerTrain {
    pub fn starts_seconds(&self) -> Vec<f64> {
        self.starts_ps.iter().map(|&t| t as f64 * 1e-12).collect()
    }
}

pub fn generate_trigger_train(plan: &PulsePlan) -> Result<TriggerTrain, SimError> {
    plan.validate()?;
    let mut starts = Vec::with_capacity(plan.n_pulses);
    let mut labels = Vec::with_capacity(plan.n_pulses);
    let table = plan.period_table_ps();
    let mut t = 0u64;
    for i in 0..plan.n_pulses {
        let bit = plan.fm_pattern.bit(i);
        starts.push(t);
        labels.push(bit);
        t += table[bit as usize];
    }
    Ok(TriggerTrain {
        starts_ps: starts,
        labels,
        synchronizable: plan.fm_pattern.is_synchronizable(),
    })
}

/// Trapezoidal pump envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEnvelope {
    duration: f64,
    rise: f64,
    fall: f64,
}

impl PulseEnvelope {
    pub fn from_plan(plan: &PulsePlan) -> Self {
        Self {
            duration: plan.pulse_duration,
            rise: plan.rise_time,
            fall: plan.fall_time,
        }
    }

    /// Relative pump intensity at `t`, in `[0, 1]`.
    pub fn intensity(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration {
            0.0
        } else if t < self.rise {
            t / self.rise
        } else if t > self.duration - self.fall {
            (self.duration - t) / self.fall
        } else {
            1.0
        }
    }

    /// Integral of the intensity over the pulse.
    pub fn area(&self) -> f64 {
        self.duration - 0.5 * (self.rise + self.fall)
    }

    /// Emission time for a uniform variate `u ∈ [0, 1)` (inverse CDF).
    pub fn sample(&self, u: f64) -> f64 {
        let a = u * self.area();
        let rise_area = 0.5 * self.rise;
        let flat = self.duration - self.rise - self.fall;
        if a < rise_area {
            (2.0 * self.rise * a).sqrt()
        } else if a < rise_area + flat {
            self.rise + (a - rise_area)
        } else {
            let from_end = (self.area() - a).max(0.0);
            self.duration - (2.0 * self.fall * from_end).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prbs7_is_maximal_length() {
        let bits = prbs7();
        assert_eq!(bits.iter().filter(|&&b| b).count(), 64);
        // periodic autocorrelation of an m-sequence is −1 off peak
        for shift in 1..PRBS7_LEN {
            let c: i32 = (0..PRBS7_LEN)
                .map(|i| {
                    let x = if bits[i] { 1 } else { -1 };
                    let y = if bits[(i + shift) % PRBS7_LEN] { 1 } else { -1 };
                    x * y
                })
                .sum();
            assert_eq!(c, -1, "shift {shift}");
        }
    }

    #[test]
    fn constant_train() {
        let plan = PulsePlan {
            n_pulses: 3,
            fm_pattern: FmPattern::Constant,
            ..Default::default()
        };
        let train = generate_trigger_train(&plan).unwrap();
        assert_eq!(train.starts_ps, vec![0, 2_000_000, 4_000_000]);
        assert!(!train.synchronizable);
    }

    #[test]
    fn prbs_intervals_follow_the_sequence() {
        let plan = PulsePlan {
            n_pulses: 30_000,
            ..Default::default()
        };
        let train = generate_trigger_train(&plan).unwrap();
        assert!(train.synchronizable);
        let bits = prbs7();
        for (i, w) in train.starts_ps.windows(2).enumerate() {
            let expected = if bits[(i / 100) % PRBS7_LEN] { 2_040_000 } else { 2_000_000 };
            assert_eq!(w[1] - w[0], expected);
        }
    }

    #[test]
    fn duty_cycle_and_tau_validation() {
        let plan = PulsePlan::default();
        assert!((plan.duty_cycle() - 0.25).abs() < 1e-12);
        plan.validate_for_tau(80e-9).unwrap();
        assert!(plan.validate_for_tau(120e-9).is_err());
    }

    #[test]
    fn pulse_must_fit_period() {
        let plan = PulsePlan {
            pulse_duration: 2.5e-6,
            ..Default::default()
        };
        assert!(plan.validate().is_err());
        let plan = PulsePlan {
            n_pulses: 0,
            ..Default::default()
        };
        assert!(generate_trigger_train(&plan).is_err());
    }

    #[test]
    fn envelope_inverse_cdf() {
        let env = PulseEnvelope::from_plan(&PulsePlan::default());
        assert_eq!(env.sample(0.0), 0.0);
        assert!((env.sample(1.0 - 1e-15) - 500e-9).abs() < 1e-12);
        // fraction of area inside the rise is 10 / 480
        let u = 10.0 / 480.0;
        assert!((env.sample(u) - 20e-9).abs() < 1e-15);
        // numeric CDF check at a few points
        for &t in &[5e-9, 100e-9, 490e-9] {
            let steps = 20_000;
            let h = t / steps as f64;
            let cdf: f64 = (0..steps).map(|k| env.intensity((k as f64 + 0.5) * h) * h).sum::<f64>() / env.area();
            assert!((env.sample(cdf) - t).abs() < 1e-11, "t = {t}");
        }
    }

    #[test]
    fn pulses_in_duration() {
        let plan = PulsePlan {
            fm_pattern: FmPattern::Constant,
            ..Default::default()
        };
        assert_eq!(plan.pulses_in(10e-6), 5);
        assert_eq!(plan.pulses_in(10.1e-6), 6);
    }
}
