use std::path::Path;
use std::process::{Command, Output};

fn strobe(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strobe"))
        .args(args)
        .env("STROBE_OUTPUT_ROOT", root)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: [&str; 12] = [
    "--set",
    "session.repeats=1",
    "--set",
    "session.pulses_per_run=60000",
    "--set",
    "source.pair_yield=1.0",
    "--set",
    "station_a.detector_efficiency=0.8",
    "--set",
    "station_b.detector_efficiency=0.8",
    "--set",
    "analysis.slot_width=20e-9",
];

#[test]
fn simulate_analyze_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut args = vec!["simulate"];
    args.extend(SMALL);
    args.extend(["--out", "s1/runs"]);
    let o = strobe(root, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("4 runs (0 glitched)"));
    assert!(root.join("s1/runs/manifest.json").is_file());

    let o = strobe(root, &["analyze", "s1/runs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("transient none"), "{}", stdout(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("s1/analysis/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema"], "strobe.summary/1");
    assert_eq!(summary["transient"]["verdict"], "none");

    let o = strobe(root, &["report", "s1/analysis"]);
    assert!(o.status.success());
    for f in ["comparison.txt", "grid16.csv", "product_curves.csv", "fig_full_s.csv", "fig_zoom_eta.csv"] {
        assert!(root.join("s1/report").join(f).is_file(), "{f}");
    }
}

#[test]
fn default_output_location_uses_root_and_session() {
    let tmp = tempfile::tempdir().unwrap();
    let o = strobe(
        tmp.path(),
        &["simulate", "--set", "session.max_runs=1", "--set", "session.pulses_per_run=10000", "--set", "seed=7"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp
        .path()
        .join("strobe-out/session-0000000000000007/runs/manifest.json")
        .is_file());
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 5\n[geometry]\ndistance_m = 3.0\n").unwrap();
    let o = strobe(
        tmp.path(),
        &["config", "-c", cfg.to_str().unwrap(), "--set", "session.repeats=3"],
    );
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("seed = 5"));
    assert!(text.contains("distance_m = 3.0"));
    assert!(text.contains("repeats = 3"));
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = strobe(tmp.path(), &["simulate", "--set", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad override"));

    let o = strobe(tmp.path(), &["report", "missing"]);
    assert_eq!(o.status.code(), Some(2));

    let o = strobe(tmp.path(), &["analyze", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
}
