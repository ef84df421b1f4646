//! Simulation and stroboscopic analysis of a pulsed, two-station Bell
//! experiment.
//!
//! The crate produces time-tag streams for two independently clocked
//! stations (optionally with an injected transient deviation from the
//! quantum prediction), stores them in a fixed binary format, recovers the
//! shared pulse numbering from the trigger channels, matches coincidences
//! and rebuilds `S_CHSH(t)`, `η(t)` and their product slot by slot.
//!
//! Module map:
//!
//! * [`model`]: joint probabilities, CHSH, transient families.
//! * [`sim`]: pulse trains, pair emission, detectors, clocks.
//! * [`tagfmt`]: the `BSTROBE1` tag file format.
//! * [`sync`]: pulse numbering and clock relation from triggers.
//! * [`coinc`]: coincidence matching and count tables.
//! * [`analysis`]: slot series, statistics and the transient detector.
//! * [`session`]: configuration, manifests and the end-to-end pipeline.

pub mod analysis;
pub mod coinc;
pub mod grid;
pub mod model;
pub mod selftest;
pub mod session;
pub mod sim;
pub mod sync;
pub mod tagfmt;

use serde::{Deserialize, Serialize};

pub use analysis::{Estimate, PlateauSummary, SlotCounts, SlotSeries, TransientVerdict};
pub use coinc::{CoincidenceRecord, CoincidenceTable};
pub use grid::SlotGrid;
pub use model::{AngleSetting, Geometry, Outcome, OutcomePair, QmStateModel, SettingsQuad, TransientModel};
pub use session::{ExperimentConfig, RunManifest};
pub use sync::{ClockFit, DetectionEvent};

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

/// Seconds to the nearest picosecond.
pub fn s_to_ps(seconds: f64) -> i64 {
    (seconds * PS_PER_S).round() as i64
}

pub fn ps_to_s(ps: i64) -> f64 {
    ps as f64 / PS_PER_S
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Station {
    A,
    B,
}

impl Station {
    pub fn id(self) -> u8 {
        match self {
            Station::A => 0,
            Station::B => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Station::A),
            1 => Some(Station::B),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.id() as usize
    }
}

/// TDC input: the two analyzer ports and the pulse trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Channel {
    DetPlus = 1,
    DetMinus = 2,
    Trigger = 3,
}

impl Channel {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Channel::DetPlus),
            2 => Some(Channel::DetMinus),
            3 => Some(Channel::Trigger),
            _ => None,
        }
    }

    pub fn detector(self) -> Option<Outcome> {
        match self {
            Channel::DetPlus => Some(Outcome::Plus),
            Channel::DetMinus => Some(Outcome::Minus),
            Channel::Trigger => None,
        }
    }

    pub fn for_detector(o: Outcome) -> Self {
        match o {
            Outcome::Plus => Channel::DetPlus,
            Outcome::Minus => Channel::DetMinus,
        }
    }
}

/// One timestamped event in a station's local clock, picoseconds.
///
/// Ordering is by timestamp, then channel, which is the on-disk order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeTag {
    pub timestamp: u64,
    pub channel: Channel,
}

impl TimeTag {
    pub fn new(channel: Channel, timestamp: u64) -> Self {
        Self { timestamp, channel }
    }
}

/// Timestamps of the trigger channel, in order.
pub fn trigger_times(tags: &[TimeTag]) -> Vec<u64> {
    tags.iter()
        .filter(|t| t.channel == Channel::Trigger)
        .map(|t| t.timestamp)
        .collect()
}
