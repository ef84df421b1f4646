//! Acceptance criteria 1–10. Prints one PASS/FAIL line each and exits
//! non-zero if any fails.
//!
//! `STROBE_ACCEPTANCE=quick` shrinks the session ensembles of criteria 5
//! and 6 from 100 to 20 sessions at the same pass fractions.

use std::time::Instant;

use strobe_core::selftest::{self, CheckResult, Depth};

fn main() {
    let depth = match std::env::var("STROBE_ACCEPTANCE").as_deref() {
        Ok("quick") => Depth::Quick,
        _ => Depth::Full,
    };
    let only: Option<Vec<u8>> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.parse().ok())
        .collect();
    let checks: [(u8, &dyn Fn() -> CheckResult); 10] = [
        (1, &selftest::accidentals),
        (2, &selftest::significance_threshold),
        (3, &selftest::contrast_calibration),
        (4, &selftest::gap_scan),
        (5, &|| selftest::null_end_to_end(depth)),
        (6, &|| selftest::tdh_end_to_end(depth)),
        (7, &selftest::synchronization),
        (8, &selftest::stroboscopic_consistency),
        (9, &selftest::format_round_trip),
        (10, &selftest::product_bound),
    ];
    let mut failed = 0;
    for (id, check) in checks {
        if only.as_ref().is_some_and(|o| !o.is_empty() && !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let r = check();
        println!("{r} [{:.1} s]", t.elapsed().as_secs_f64());
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
