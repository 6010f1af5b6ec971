//! Command-line front end. Usage errors exit with 2, data errors with 1 and a
//! JSON object on stderr.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{output_digests, write_manifest, RunManifest};
use crate::pipeline::{self, BacktestArgs, FactorName, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "munidex",
    version,
    about = "Municipal real-estate price indices, factors and forecasts"
)]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, env = "MUNIDEX_OUT", default_value = "out")]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelInputs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding the statistics tables and centroids.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Score every anchor instead of the held-out years.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic market with known true indices.
    Synth {
        #[arg(long)]
        seed: u64,
    },
    /// Validate raw inputs and write canonical copies.
    Ingest {
        #[arg(long)]
        transactions: Option<PathBuf>,
        /// Directory of statistics tables.
        #[arg(long)]
        tables: Option<PathBuf>,
    },
    /// Build per-municipality hedonic price indices.
    Index {
        #[arg(long)]
        transactions: PathBuf,
    },
    /// Compute one factor panel.
    Factor {
        #[arg(long = "factor", visible_alias = "name", value_enum)]
        name: FactorName,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        neighbors: usize,
    },
    /// Regress forward returns on a factor.
    EvalLinear {
        #[arg(long)]
        factor: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 3, 4])]
        horizons: Vec<u32>,
    },
    /// Long-short backtest against a random baseline.
    Backtest {
        /// Factor CSV used as ranking signal.
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        horizon: u32,
        #[arg(long)]
        seed: u64,
        /// Rank on the negated signal.
        #[arg(long)]
        invert: bool,
        /// Overrides the configured universe size.
        #[arg(long)]
        universe_size: Option<usize>,
        /// Overrides the configured number of random baseline portfolios.
        #[arg(long = "baseline-n")]
        baseline_n: Option<usize>,
        /// TOML table of reference metric values to report deltas against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Train the sequence forecaster.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Score a trained model.
    Evaluate {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Feature trajectories of the top and bottom prediction deciles.
    ReportDeciles {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Index { .. } => "index",
            Command::Factor { .. } => "factor",
            Command::EvalLinear { .. } => "eval-linear",
            Command::Backtest { .. } => "backtest",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::ReportDeciles { .. } => "report-deciles",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth { seed }
            | Command::Backtest { seed, .. }
            | Command::Train { seed, .. }
            | Command::ReportDeciles { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

fn dispatch(stage: &mut Stage, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth { seed } => pipeline::synth(stage, *seed),
        Command::Ingest { transactions, tables } => pipeline::ingest(stage, transactions.as_deref(), tables.as_deref()),
        Command::Index { transactions } => pipeline::index(stage, transactions),
        Command::Factor {
            name,
            data,
            index,
            neighbors,
        } => pipeline::factor(stage, *name, data, index.as_deref(), *neighbors),
        Command::EvalLinear {
            factor,
            index,
            horizons,
        } => pipeline::eval_linear(stage, factor, index, horizons),
        Command::Backtest {
            signal,
            index,
            population,
            horizon,
            seed,
            invert,
            universe_size,
            baseline_n,
            reference,
        } => {
            if let Some(u) = universe_size {
                stage.config.backtest.universe_size = *u;
            }
            if let Some(n) = baseline_n {
                stage.config.backtest.baseline_portfolios = *n;
            }
            pipeline::backtest(
                stage,
                &BacktestArgs {
                    signal,
                    index,
                    population,
                    horizon: *horizon,
                    seed: *seed,
                    invert: *invert,
                    reference: reference.as_deref(),
                },
            )
        }
        Command::Train { data, index, seed } => pipeline::train_stage(stage, data, index, *seed),
        Command::Evaluate { inputs, reference } => pipeline::evaluate(
            stage,
            &inputs.model,
            &inputs.data,
            &inputs.index,
            inputs.all,
            reference.as_deref(),
        ),
        Command::ReportDeciles { inputs, seed, samples } => pipeline::report_deciles(
            stage,
            &inputs.model,
            &inputs.data,
            &inputs.index,
            *seed,
            *samples,
            inputs.all,
        ),
    }
}

/// Runs one subcommand and writes its manifest.
pub fn run(cli: &Cli, args: Vec<String>) -> Result<()> {
    let started = Instant::now();
    let (config, config_text) = RunConfig::load(cli.config.as_deref())?;
    let mut stage = Stage::new(&cli.out, config, cli.jobs)?;
    dispatch(&mut stage, &cli.command)?;
    let (inputs, upstream) = std::mem::take(&mut stage.inputs).into_parts();
    let manifest = RunManifest {
        subcommand: cli.command.name().into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: cli.command.seed(),
        args: args.into_iter().skip(1).collect(),
        config_text,
        config: serde_json::to_value(&stage.config)?,
        inputs,
        upstream,
        outputs: output_digests(&stage.out, &stage.written)?,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifest(&stage.out, &manifest)?;
    Ok(())
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}

pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}
