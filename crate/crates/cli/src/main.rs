//! `tomosar` command-line tool.
//!
//! Exit codes: 0 on success, 2 on a config or validation error, 1 on any
//! runtime failure (I/O, hash mismatch, divergence).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tomosar::config::{RunConfig, DEFAULT_CONFIG};
use tomosar::eval::{comparison_table, ordering_summary, BenchReport};
use tomosar::pipeline::{Pipeline, GT_DATASET_FILE, WEIGHTS_FILE};
use tomosar::Error;

#[derive(Parser)]
#[command(
    name = "tomosar",
    version,
    about = "Sparse elevation reconstruction for multi-baseline SAR tomography"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; the bundled default setup when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set grid.len=24`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scene and write the ground-truth and CS-labeled datasets.
    Simulate,
    /// Write the steering matrix and the analytic weights.
    Precompute,
    /// Train the network on a dataset.
    Train(TrainArgs),
    /// Train one network per depth and record validation NMSE.
    SweepLayers(TrainArgs),
    /// Reconstruct every pixel of a dataset and export point clouds.
    Reconstruct {
        /// ista, omp, iht, alista or truth.
        #[arg(long)]
        solver: String,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Trained model, required for `alista`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score estimate files against a ground-truth dataset.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        estimates: Vec<PathBuf>,
    },
    /// Time solvers on the evaluation pixels.
    Bench {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Classical solvers, comma separated.
        #[arg(long, value_delimiter = ',')]
        solvers: Vec<String>,
        /// Trained models to time alongside.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let overrides = common
        .overrides
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::config(kv.as_str(), "override must look like KEY=VALUE"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    RunConfig::from_toml(&text, &overrides)
}

fn or_default(p: &Pipeline, given: Option<PathBuf>, name: &str) -> PathBuf {
    given.unwrap_or_else(|| p.path(name))
}

fn show(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<(), Error> {
    let p = Pipeline::new(load_config(&cli.common)?)?;
    match cli.command {
        Command::Simulate => p.simulate()?.iter().for_each(|f| show(f)),
        Command::Precompute => {
            let (r, w) = p.precompute()?;
            show(&r);
            show(&w);
        }
        Command::Train(a) => {
            let d = or_default(&p, a.dataset, GT_DATASET_FILE);
            show(&p.train(&d, &or_default(&p, a.weights, WEIGHTS_FILE))?);
        }
        Command::SweepLayers(a) => {
            let d = or_default(&p, a.dataset, GT_DATASET_FILE);
            let out = p.sweep(&d, &or_default(&p, a.weights, WEIGHTS_FILE))?;
            print!("{}", fs::read_to_string(&out)?);
            show(&out);
        }
        Command::Reconstruct { solver, dataset, model } => {
            let d = or_default(&p, dataset, GT_DATASET_FILE);
            show(&p.reconstruct(&d, &solver, model.as_deref())?);
        }
        Command::Eval { dataset, estimates } => {
            let d = or_default(&p, dataset, GT_DATASET_FILE);
            let (reports, out) = p.evaluate(&d, &estimates)?;
            print!("{}", comparison_table(&reports));
            println!("ordering: {}", ordering_summary(&reports));
            show(&out);
        }
        Command::Bench {
            dataset,
            solvers,
            models,
        } => {
            let d = or_default(&p, dataset, GT_DATASET_FILE);
            let (reports, out) = p.bench(&d, &solvers, &models)?;
            print!("{}", BenchReport::table(&reports));
            show(&out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
