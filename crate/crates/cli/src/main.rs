use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blowup_core::config::RunConfig;
use blowup_core::pipeline::{run_pipeline, Stage};
use blowup_core::plot::{emit_plots, find_metric_csvs};
use clap::{Parser, Subcommand};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "BLOWUP_OUT";
const DEFAULT_OUT: &str = "blowup-out";

#[derive(Debug, Parser)]
#[command(name = "blowup", version, about = "ODE-type blow-up laboratory for the focusing semilinear wave equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory. Falls back to the config's `output_dir`, then to $BLOWUP_OUT, then to ./blowup-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run this stage instead of the one named by the subcommand.
    #[arg(long, global = true, value_name = "STAGE")]
    stage_override: Option<Stage>,

    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and validate the ansatz stack.
    Ansatz,
    /// Integrate the ladder of start times from a stored stack.
    Solve,
    /// Turn stored trajectories into verdicts and rate tables.
    Classify,
    /// Run ansatz, solve and classify in order.
    All,
    /// Render SVG charts of every metric CSV in the output directory.
    Plot,
}

fn output_dir(cli_out: Option<&Path>, config: Option<&RunConfig>) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = config.and_then(|c| c.output_dir.clone()) {
        return p;
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        bail!("--config <path> is required for this command");
    };
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let stage = match cli.command {
        Command::Ansatz => Stage::Ansatz,
        Command::Solve => Stage::Solve,
        Command::Classify => Stage::Classify,
        Command::All => Stage::All,
        Command::Plot => {
            let config = match &cli.config {
                Some(p) => Some(load_config(Some(p))?),
                None => None,
            };
            let out = output_dir(cli.out.as_deref(), config.as_ref());
            let csvs = find_metric_csvs(&out)?;
            if csvs.is_empty() {
                bail!("no metric CSVs under {}", out.display());
            }
            let written = emit_plots(&csvs, &out.join("plots"))?;
            println!("wrote {} plots to {}", written.len(), out.join("plots").display());
            return Ok(());
        }
    };
    let stage = cli.stage_override.unwrap_or(stage);
    let config = load_config(cli.config.as_deref())?;
    let out = output_dir(cli.out.as_deref(), Some(&config));
    let manifest = run_pipeline(&config, &out, stage)?;
    println!(
        "{}: J = {}, k = {}, lambda = {}, kappa = {}; manifest at {}",
        stage.name(),
        manifest.params.depth,
        manifest.params.k,
        manifest.params.lambda,
        manifest.params.kappa,
        out.join(blowup_core::manifest::MANIFEST_FILE).display()
    );
    Ok(())
}
