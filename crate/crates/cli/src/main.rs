//! `isb`: generate populations, calibrate thresholds, run sweeps and rebuild
//! reports.

use std::env;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use isb_core::runner::{self, ExperimentConfig};

const SEED_ENV: &str = "ISB_SEED";

#[derive(Parser, Debug)]
#[command(name = "isb", version, about = "1:N vs 1:First identification search benchmark")]
struct Cli {
    /// Override the config seed (takes precedence over ISB_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic population only.
    Generate(ConfigArg),
    /// Calibrate thresholds and write calibration.csv.
    Calibrate(ConfigArg),
    /// Run the full sweep.
    Run(ConfigArg),
    /// Rebuild the results table from a run's transaction logs.
    Report {
        /// Output directory of a finished run.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        dir: Option<PathBuf>,
        /// Take the run directory from this config's output_dir.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the rebuilt table [default: <dir>/report.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))?;
    let from_env = match env::var(SEED_ENV) {
        Ok(v) => Some(v.trim().parse::<u64>().with_context(|| format!("{SEED_ENV}=`{v}` is not a seed"))?),
        Err(env::VarError::NotPresent) => None,
        Err(e) => bail!("{SEED_ENV}: {e}"),
    };
    if let Some(s) = seed.or(from_env) {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().context("starting worker pool")?;
    }
    match cli.command {
        Command::Generate(c) => {
            let cfg = load(&c.config, cli.seed)?;
            let (_, manifest) = runner::generate(&cfg)?;
            info!("wrote {}", manifest.display());
        }
        Command::Calibrate(c) => {
            let cfg = load(&c.config, cli.seed)?;
            for pc in runner::calibrate(&cfg)? {
                for t in &pc.thresholds {
                    info!(
                        "policy {} target {}: threshold {}{}",
                        pc.policy,
                        t.target.value(),
                        t.threshold.value,
                        if t.unattainable { " (unattainable)" } else { "" }
                    );
                }
            }
            info!("wrote {}", cfg.output_dir.join(runner::CALIBRATION_FILE).display());
        }
        Command::Run(c) => {
            let cfg = load(&c.config, cli.seed)?;
            let summary = runner::run_experiment(&cfg)?;
            info!("wrote {} rows to {}", summary.results.len(), summary.results_path.display());
        }
        Command::Report { dir, config, out } => {
            let dir = match (dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => load(&c, cli.seed)?.output_dir,
                (None, None) => unreachable!("clap requires one of --dir and --config"),
            };
            let mut rows = runner::report(&dir)?;
            let out = out.unwrap_or_else(|| dir.join("report.csv"));
            runner::write_results(&out, &mut rows)?;
            info!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
