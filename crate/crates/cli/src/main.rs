//! `nvcav`: simulate the cavity-coupled NV models, fit measured traces and
//! re-run the reference scenario checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod fit;
mod output;
mod reproduce;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::{CliError, Result};
use output::Format;

#[derive(Debug, Parser)]
#[command(name = "nvcav", version, about)]
struct Cli {
    /// JSON run configuration with a units block and model parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "NVCAV_OUT")]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Format of tabular outputs; reports are always JSON.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a model curve and its report.
    Simulate {
        #[arg(value_enum)]
        model: simulate::SimModel,
        /// Three-level rates k_eg,k_532,k_s,k_d in MHz (g2 and tags).
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Fit a model to a data file.
    Fit {
        #[arg(value_enum)]
        model: fit::FitModel,
        /// Data file; falls back to the config's `data` entry.
        data: Option<PathBuf>,
    },
    /// Check a figure's reference numbers; exits 1 on any breach.
    Reproduce {
        #[arg(value_enum)]
        figure: reproduce::FigureArg,
    },
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("nvcav-out"))
}

fn run(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Simulate { model, rates } => {
            let cfg = RunConfig::load(model.id(), config, cli.seed)?;
            let rates = match rates.as_deref() {
                None => None,
                Some(&[a, b, c, d]) => Some([a, b, c, d]),
                Some(r) => return Err(CliError::Usage(format!("--rates needs 4 values, got {}", r.len()))),
            };
            let sim = simulate::run(*model, &cfg, &out_dir(cli, &cfg), cli.format, rates)?;
            for f in sim.files {
                println!("{}", f.display());
            }
        }
        Command::Fit { model, data } => {
            let cfg = RunConfig::load(model.id(), config, cli.seed)?;
            let data = data
                .clone()
                .or_else(|| cfg.data.clone())
                .ok_or_else(|| CliError::Usage("no data file given".into()))?;
            if !data.exists() {
                return Err(CliError::Usage(format!("data file {} does not exist", data.display())));
            }
            for f in fit::run(*model, &data, &cfg, &out_dir(cli, &cfg), cli.format)? {
                println!("{}", f.display());
            }
        }
        Command::Reproduce { figure } => {
            let id = figure.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
            let cfg = RunConfig::load(&id, config, cli.seed)?;
            let path = reproduce::run(*figure, &cfg, &out_dir(cli, &cfg))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
