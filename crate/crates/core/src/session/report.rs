use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AnalysisSummary, PipelineError, TransientReport, SERIES_FILE, SUMMARY_FILE, SUMMARY_SCHEMA};
use crate::model::{min_counts_for_gap, qm_classical_gap, OutcomePair};

/// Zoom window at the head of the pulse, seconds.
pub const ZOOM_WINDOW: f64 = 100e-9;

/// Observables exported as figure series: file stem and series.csv column.
pub const FIGURE_OBSERVABLES: [(&str, &str); 3] = [("s", "s"), ("eta", "eta"), ("product", "s_times_eta")];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub files: Vec<PathBuf>,
}

/// `series.csv` as columns of raw strings.
struct SeriesTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl SeriesTable {
    fn read(path: &Path) -> Result<Self, PipelineError> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        let index = header.iter().enumerate().map(|(i, h)| (h.clone(), i)).collect();
        Ok(Self { header, rows, index })
    }

    fn col(&self, name: &str) -> Result<usize, PipelineError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| PipelineError::Schema(format!("series.csv lacks column {name}")))
    }

    fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.rows[row][col].parse().ok()
    }
}

fn require(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::Missing(path))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

/// Turns the outputs of `cmd_analyze` in `analysis_dir` into plot-ready data.
pub fn cmd_report(analysis_dir: &Path, out_dir: &Path) -> Result<ReportBundle, PipelineError> {
    let summary_path = require(analysis_dir.join(SUMMARY_FILE))?;
    let series_path = require(analysis_dir.join(SERIES_FILE))?;
    let text = fs::read_to_string(&summary_path).map_err(|e| PipelineError::io(&summary_path, e))?;
    let summary: AnalysisSummary = serde_json::from_str(&text)?;
    if summary.schema != SUMMARY_SCHEMA {
        return Err(PipelineError::Schema(summary.schema));
    }
    let table = SeriesTable::read(&series_path)?;
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;

    let mut files = Vec::new();
    let t_col = table.col("t_start_ns")?;
    let head = summary
        .plateau
        .as_ref()
        .map_or("A+", |p| p.headline.label())
        .to_string();

    for (stem, column) in FIGURE_OBSERVABLES {
        let column = if column == "eta" { format!("eta_{head}") } else { column.to_string() };
        let (v, s) = match (table.col(&column), table.col(&format!("{column}_sigma"))) {
            (Ok(v), Ok(s)) => (v, s),
            // angle scans carry no S
            _ => continue,
        };
        for (prefix, limit) in [("fig_full", f64::INFINITY), ("fig_zoom", ZOOM_WINDOW * 1e9)] {
            let mut out = String::from("t_ns,value,sigma\n");
            for i in 0..table.rows.len() {
                let t = table.value(i, t_col).unwrap_or(f64::NAN);
                if !(t < limit) {
                    continue;
                }
                if let (Some(x), Some(e)) = (table.value(i, v), table.value(i, s)) {
                    let _ = writeln!(out, "{t},{x},{e}");
                }
            }
            let path = out_dir.join(format!("{prefix}_{stem}.csv"));
            write_text(&path, &out)?;
            files.push(path);
        }
    }

    // all settings × outcome types per slot
    let mut grid_cols = Vec::new();
    for k in 0.. {
        let cols: Vec<usize> = OutcomePair::ALL
            .iter()
            .filter_map(|p| table.index.get(&format!("n{k}_{}", p.label())).copied())
            .collect();
        if cols.len() != 4 {
            break;
        }
        grid_cols.extend(cols);
    }
    if !grid_cols.is_empty() {
        let mut out = String::from("t_ns");
        for &c in &grid_cols {
            out.push(',');
            out.push_str(&table.header[c]);
        }
        out.push('\n');
        for row in &table.rows {
            out.push_str(&row[t_col]);
            for &c in &grid_cols {
                out.push(',');
                out.push_str(&row[c]);
            }
            out.push('\n');
        }
        let path = out_dir.join(format!("grid{}.csv", grid_cols.len()));
        write_text(&path, &out)?;
        files.push(path);
    }

    if let (Ok(p), Ok(ps)) = (table.col("s_times_eta"), table.col("s_times_eta_sigma")) {
        let eta0 = summary.expected.eta0;
        let mut out = String::from("t_ns,s_times_eta,sigma,rescaled,rescaled_sigma,classical_bound,qm_expected\n");
        for i in 0..table.rows.len() {
            if let (Some(x), Some(e)) = (table.value(i, p), table.value(i, ps)) {
                let _ = writeln!(
                    out,
                    "{},{x},{e},{},{},{},{}",
                    table.rows[i][t_col],
                    x / eta0,
                    e / eta0,
                    summary.product_bound.bound,
                    summary.expected.s_qm
                );
            }
        }
        let path = out_dir.join("product_curves.csv");
        write_text(&path, &out)?;
        files.push(path);
    }

    let path = out_dir.join("comparison.txt");
    write_text(&path, &comparison_text(&summary))?;
    files.push(path);
    Ok(ReportBundle { files })
}

fn est(e: Option<crate::analysis::Estimate>) -> String {
    e.map_or("n/a".into(), |e| format!("{:.4} ± {:.4}", e.value, e.sigma))
}

fn opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |x| format!("{x:.4}"))
}

/// Plateau statistics next to the configured expectations.
pub fn comparison_text(s: &AnalysisSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "session            {}", s.session_id);
    let _ = writeln!(t, "status             {:?}", s.status);
    let _ = writeln!(
        t,
        "runs               {} used, {} glitched, {} skipped",
        s.runs_used,
        s.runs_glitched,
        s.skipped.len()
    );
    let _ = writeln!(
        t,
        "geometry           L = {} m, tau = {:.2} ns",
        s.geometry.distance_straight_line,
        s.geometry.tau * 1e9
    );
    let _ = writeln!(t, "slots              {} × {:.0} ns", s.n_slots, s.slot_width * 1e9);
    let _ = writeln!(t);
    let _ = writeln!(t, "{:<28}{:>22}{:>22}", "quantity", "measured", "expected");
    let e = &s.expected;
    if let Some(p) = &s.plateau {
        let _ = writeln!(
            t,
            "{:<28}{:>22}{:>22}",
            "in-pulse window (ns)",
            format!("{:.0}–{:.0}", p.in_pulse_start * 1e9, p.in_pulse_end * 1e9),
            ""
        );
        let _ = writeln!(t, "{:<28}{:>22}{:>22.4}", "S, time average", opt(p.time_avg_s), e.s_qm);
        let _ = writeln!(t, "{:<28}{:>22}{:>22}", "S, time dispersion", opt(p.time_dispersion_s), "");
        let _ = writeln!(t, "{:<28}{:>22}{:>22.4}", "S, all data", est(p.all_data_s), e.s_qm);
        let _ = writeln!(t, "{:<28}{:>22}{:>22.4}", "S, in-pulse tables", est(p.in_pulse_s), e.s_qm);
        let _ = writeln!(
            t,
            "{:<28}{:>22}{:>22}",
            "reduced chi2 of S",
            opt(p.reduced_chi2_s),
            format!("1 (dof {})", p.chi2_dof)
        );
        let label = p.headline.label();
        let _ = writeln!(t, "{:<28}{:>22}{:>22}", format!("eta {label}, time average"), opt(p.time_avg_eta), "");
        let _ = writeln!(t, "{:<28}{:>22}{:>22}", format!("eta {label}, all data"), est(p.all_data_eta), "");
        let _ = writeln!(t, "{:<28}{:>22}{:>22.4}", format!("eta {label}, in-pulse"), est(p.in_pulse_eta), e.eta0);
        let _ = writeln!(t, "{:<28}{:>22}{:>22}", "S·eta, time average", opt(p.time_avg_product), "< 2");
    }
    let pb = &s.product_bound;
    let _ = writeln!(t, "{:<28}{:>22}{:>22}", "S·eta, maximum", est(pb.max_product), "< 2");
    let _ = writeln!(t, "{:<28}{:>22}{:>22.4}", "S·eta/eta0, in-pulse", est(pb.rescaled_plateau), e.s_qm);
    let _ = writeln!(
        t,
        "{:<28}{:>22.3e}{:>22.3e}",
        "off-pulse accidentals/run",
        s.accidentals.observed_off_pulse_per_run,
        s.accidentals.expected_off_pulse_per_run
    );
    let _ = writeln!(
        t,
        "{:<28}{:>22.1}{:>22.1}",
        "delta-t sd (ps)",
        s.delta_t.sd * 1e12,
        s.delta_t.expected_sd * 1e12
    );
    let gap = qm_classical_gap();
    let n1 = min_counts_for_gap(gap.max_gap, 1.0).unwrap_or(0);
    let n3 = min_counts_for_gap(gap.max_gap, 3.0).unwrap_or(0);
    let _ = writeln!(
        t,
        "{:<28}{:>22}{:>22}",
        "counts per slot needed",
        format!("1σ: {n1}, 3σ: {n3}"),
        ""
    );
    let _ = writeln!(t);
    let verdict = match &s.transient {
        TransientReport::None => "transient: none".to_string(),
        TransientReport::Deviation(d) => format!(
            "transient: deviation in {} over {:.0}–{:.0} ns ({} slots, magnitude {:.3})",
            d.observable,
            d.start * 1e9,
            d.end * 1e9,
            d.slots.len(),
            d.magnitude
        ),
        TransientReport::Untestable { reason } => format!("transient: untestable ({reason})"),
    };
    let _ = writeln!(t, "{verdict}");
    if let Some(sc) = &s.scan {
        let _ = writeln!(
            t,
            "scan: mean visibility {:.4}, phase offset {:.4} rad{}",
            sc.mean_visibility,
            sc.phase_offset,
            if sc.shifted { " (shifted)" } else { "" }
        );
    }
    t
}
