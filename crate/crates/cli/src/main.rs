use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use strobe_core::selftest::{self, Depth};
use strobe_core::session::{cmd_analyze, cmd_report, cmd_simulate, TransientReport, MANIFEST_FILE};
use strobe_core::{ExperimentConfig, RunManifest};

/// Simulate and analyze pulsed two-station Bell sessions slot by slot.
#[derive(Parser)]
#[command(name = "strobe", version, about)]
struct Cli {
    /// Root directory that relative output paths are resolved against.
    #[arg(long, global = true, env = "STROBE_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply to anything left out.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set session.repeats=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Ok(base.with_overrides(&self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every run of a session into tag files plus a manifest.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory [default: <output_dir>/<session id>/runs]
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Analyze one or more manifests of the same session.
    Analyze {
        /// Manifest files, or directories holding manifest.json.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Output directory [default: next to the first manifest's directory, `analysis`]
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Turn analysis outputs into figure-ready CSV files and a comparison table.
    Report {
        /// Directory written by `analyze`.
        analysis: PathBuf,
        /// Output directory [default: sibling `report` directory]
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks.
    Selftest {
        /// Use 100-session ensembles instead of 20 (takes several minutes).
        #[arg(long)]
        full: bool,
    },
    /// Print the effective config as TOML.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn resolve(root: Option<&Path>, p: PathBuf) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p,
    }
}

fn sibling(dir: &Path, name: &str) -> PathBuf {
    match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(name),
        _ => PathBuf::from(name),
    }
}

fn load_manifest(p: &Path) -> Result<(RunManifest, PathBuf)> {
    let file = if p.is_dir() { p.join(MANIFEST_FILE) } else { p.to_path_buf() };
    let m = RunManifest::load(&file).with_context(|| format!("loading manifest {}", file.display()))?;
    let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((m, base))
}

fn run(cli: Cli) -> Result<bool> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = config.load()?;
            let out = match out {
                Some(o) => resolve(root, o),
                None => resolve(root, cfg.output_dir.join(cfg.session_id()).join("runs")),
            };
            info!("simulating {} runs into {}", cfg.n_runs(), out.display());
            let m = cmd_simulate(&cfg, &out)?;
            let glitched = m.runs.len() - m.ok_runs().count();
            println!(
                "{}: {} runs ({} glitched) -> {}",
                m.session_id,
                m.runs.len(),
                glitched,
                out.join(MANIFEST_FILE).display()
            );
        }
        Command::Analyze { manifests, out } => {
            let loaded = manifests
                .iter()
                .map(|p| load_manifest(&resolve(root, p.clone())))
                .collect::<Result<Vec<_>>>()?;
            let out = match out {
                Some(o) => resolve(root, o),
                None => sibling(&loaded[0].1, "analysis"),
            };
            let s = cmd_analyze(&loaded, &out)?;
            let verdict = match &s.transient {
                TransientReport::None => "none".to_string(),
                TransientReport::Deviation(d) => {
                    format!("deviation in {} at {:.0}-{:.0} ns", d.observable, d.start * 1e9, d.end * 1e9)
                }
                TransientReport::Untestable { reason } => format!("untestable ({reason})"),
            };
            let s_text = s
                .plateau
                .as_ref()
                .and_then(|p| p.all_data_s)
                .map_or("n/a".into(), |e| format!("{:.4} ± {:.4}", e.value, e.sigma));
            println!(
                "{}: {:?}, {} runs used, S(all data) {s_text}, transient {verdict} -> {}",
                s.session_id,
                s.status,
                s.runs_used,
                out.display()
            );
        }
        Command::Report { analysis, out } => {
            let analysis = resolve(root, analysis);
            let out = match out {
                Some(o) => resolve(root, o),
                None => sibling(&analysis, "report"),
            };
            let b = cmd_report(&analysis, &out)?;
            for f in &b.files {
                println!("{}", f.display());
            }
        }
        Command::Selftest { full } => {
            let depth = if full { Depth::Full } else { Depth::Quick };
            let results = selftest::run_all(depth);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                println!("{failed} checks failed");
                return Ok(false);
            }
        }
        Command::Config { config } => {
            let cfg = config.load()?;
            cfg.validate()?;
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

