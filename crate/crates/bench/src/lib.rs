//! Shared fixtures for the benchmarks.

use strobe_core::session::{plan_runs, simulate_run};
use strobe_core::{ExperimentConfig, TimeTag};

/// Default physics with a short run of `pulses` pulses.
pub fn config(pulses: usize) -> ExperimentConfig {
    ExperimentConfig::default()
        .with_overrides(&[format!("session.pulses_per_run={pulses}"), "session.max_runs=1".into()])
        .expect("valid overrides")
}

/// Tag streams of the first run of `cfg`.
pub fn run_tags(cfg: &ExperimentConfig) -> [Vec<TimeTag>; 2] {
    let plan = &plan_runs(cfg)[0];
    simulate_run(cfg, plan).expect("simulation succeeds")
}
