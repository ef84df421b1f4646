use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Channel, TimeTag, PS_PER_S};

/// A station's free-running TDC clock.
///
/// `local(t) = offset + (1 + drift_rate)·t + N(0, jitter_sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockModel {
    pub offset: f64,
    pub drift_rate: f64,
    pub jitter_sigma: f64,
}

impl ClockModel {
    pub fn ideal() -> Self {
        Self::default()
    }
}

/// An event in true (global) time, seconds relative to some origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueEvent {
    pub channel: Channel,
    pub time: f64,
}

/// Maps true-time events to local picosecond tags, sorted.
///
/// `origin` is the absolute true time of `time = 0`. Results that would be
/// negative saturate at zero.
pub fn apply_clock(events: &[TrueEvent], clock: &ClockModel, origin: f64, seed: u64) -> Vec<TimeTag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 1.0 + clock.drift_rate;
    // split the large constant part off so per-event arithmetic keeps sub-ps precision
    let base = (clock.offset * PS_PER_S + rate * origin * PS_PER_S).round();
    let jitter = (clock.jitter_sigma > 0.0).then(|| Normal::new(0.0, clock.jitter_sigma * PS_PER_S).expect("finite sigma"));
    let mut tags: Vec<TimeTag> = events
        .iter()
        .map(|e| {
            let mut local = rate * e.time * PS_PER_S;
            if let Some(n) = &jitter {
                local += n.sample(&mut rng);
            }
            let ts = (base + local.round()).max(0.0) as u64;
            TimeTag::new(e.channel, ts)
        })
        .collect();
    tags.sort_unstable();
    tags
}

/// Drops detector tags closer than `dead_time` to the previous kept tag on
/// the same channel. Trigger tags pass through.
pub fn apply_dead_time(tags: Vec<TimeTag>, dead_time: f64) -> Vec<TimeTag> {
    if dead_time <= 0.0 {
        return tags;
    }
    let dead_ps = (dead_time * PS_PER_S).round() as u64;
    let mut last: [Option<u64>; 2] = [None, None];
    tags.into_iter()
        .filter(|t| {
            let slot = match t.channel {
                Channel::DetPlus => 0,
                Channel::DetMinus => 1,
                Channel::Trigger => return true,
            };
            match last[slot] {
                Some(prev) if t.timestamp - prev < dead_ps => false,
                _ => {
                    last[slot] = Some(t.timestamp);
                    true
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train(n: usize, period: f64) -> Vec<TrueEvent> {
        (0..n)
            .map(|i| TrueEvent {
                channel: Channel::Trigger,
                time: i as f64 * period,
            })
            .collect()
    }

    #[test]
    fn ideal_clock_is_identity() {
        let tags = apply_clock(&train(4, 2e-6), &ClockModel::ideal(), 0.0, 1);
        let ts: Vec<u64> = tags.iter().map(|t| t.timestamp).collect();
        assert_eq!(ts, vec![0, 2_000_000, 4_000_000, 6_000_000]);
    }

    #[test]
    fn offset_shifts_exactly() {
        let ev = train(1000, 2e-6);
        let plain = apply_clock(&ev, &ClockModel::ideal(), 0.0, 1);
        let shifted = apply_clock(
            &ev,
            &ClockModel {
                offset: 1e-3,
                ..Default::default()
            },
            0.0,
            1,
        );
        for (p, s) in plain.iter().zip(&shifted) {
            assert_eq!(s.timestamp - p.timestamp, 1_000_000_000);
        }
    }

    #[test]
    fn drift_over_a_run() {
        // 30 s of triggers at 500 kHz, only the endpoints matter
        let ev = vec![
            TrueEvent {
                channel: Channel::Trigger,
                time: 0.0,
            },
            TrueEvent {
                channel: Channel::Trigger,
                time: 30.0,
            },
        ];
        let plain = apply_clock(&ev, &ClockModel::ideal(), 0.0, 1);
        let drifted = apply_clock(
            &ev,
            &ClockModel {
                drift_rate: 1e-5,
                ..Default::default()
            },
            0.0,
            1,
        );
        let shift = drifted[1].timestamp - plain[1].timestamp;
        assert_eq!(shift, 300_000_000); // 300 µs
    }

    #[test]
    fn jitter_has_requested_spread() {
        let ev = train(20_000, 2e-6);
        let clock = ClockModel {
            jitter_sigma: 2e-9,
            ..Default::default()
        };
        let tags = apply_clock(&ev, &clock, 0.0, 7);
        let res: Vec<f64> = tags
            .iter()
            .enumerate()
            .map(|(i, t)| t.timestamp as f64 - i as f64 * 2e6)
            .collect();
        let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
        assert!((rms - 2000.0).abs() < 60.0, "rms {rms}");
    }

    #[test]
    fn output_is_sorted() {
        let ev = vec![
            TrueEvent {
                channel: Channel::DetMinus,
                time: 5e-9,
            },
            TrueEvent {
                channel: Channel::DetPlus,
                time: 1e-9,
            },
            TrueEvent {
                channel: Channel::Trigger,
                time: 5e-9,
            },
        ];
        let tags = apply_clock(&ev, &ClockModel::ideal(), 0.0, 0);
        assert!(tags.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(tags[1].channel, Channel::DetMinus);
    }

    #[test]
    fn dead_time_filter() {
        let tags = vec![
            TimeTag::new(Channel::DetPlus, 0),
            TimeTag::new(Channel::DetMinus, 10),
            TimeTag::new(Channel::DetPlus, 20),
            TimeTag::new(Channel::Trigger, 25),
            TimeTag::new(Channel::DetPlus, 60_000),
        ];
        let kept = apply_dead_time(tags, 50e-9);
        assert_eq!(kept.len(), 4);
        assert!(!kept.contains(&TimeTag::new(Channel::DetPlus, 20)));
    }
}
