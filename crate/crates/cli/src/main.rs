//! `bias-probe`: audit a language model's buy/sell preferences over a stock
//! universe and check whether they survive counter-evidence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "bias-probe", version, about = "Confirmation-bias audit for LLM investment decisions")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each overrides the same-named key of
/// the `--config` file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file with flat keys (universe, evidence, models, n, ...).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Universe CSV (ticker,name,sector,market_cap).
    #[arg(long, global = true)]
    pub universe: Option<PathBuf>,
    /// Evidence store; defaults to <out>/evidence.jsonl.
    #[arg(long, global = true)]
    pub evidence: Option<PathBuf>,
    /// Output directory for the evidence store, runs and caches.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run directory name under <out>/runs; defaults to run-<seed>.
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    #[arg(long, global = true)]
    pub run_seed: Option<u64>,
    /// Valid decisions per stock and condition.
    #[arg(long, short = 'n', global = true)]
    pub n: Option<u32>,
    /// Evidence items per side in balanced and intensity prompts.
    #[arg(long, global = true)]
    pub k_per_side: Option<usize>,
    /// Baseline intensity in percent.
    #[arg(long, global = true)]
    pub i_base: Option<f64>,
    /// Volume ratios as support:counter pairs, e.g. "0:3,1:2,1:3,2:3".
    #[arg(long, global = true)]
    pub ratios: Option<String>,
    /// Intensity increments in percent, e.g. "1,3,5,10".
    #[arg(long, global = true)]
    pub deltas: Option<String>,
    /// Scripted agent JSON file; repeat for several agents.
    #[arg(long, global = true)]
    pub agent: Vec<PathBuf>,
    /// OpenAI-compatible base URL for a remote model.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub model_id: Option<String>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Request token log-probabilities from remote models.
    #[arg(long, global = true)]
    pub logprobs: bool,
    #[arg(long, global = true)]
    pub max_concurrent: Option<usize>,
    #[arg(long, global = true)]
    pub qualitative_per_side: Option<usize>,
    #[arg(long, global = true)]
    pub quantitative_per_side: Option<usize>,
    /// Keep only verification-group members with |preference| at least this.
    #[arg(long, global = true)]
    pub min_preference: Option<f64>,
    /// Apply Yates' continuity correction to the chi-square test.
    #[arg(long, global = true)]
    pub yates: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Template,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Volume,
    Intensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    Sector,
    Size,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the balanced evidence store.
    Generate {
        #[arg(long, value_enum, default_value = "template")]
        source: Source,
    },
    /// Elicit each model's preference per stock from balanced prompts.
    Elicit,
    /// Test the most-preferred group against counter-evidence.
    Verify {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_enum, default_value = "sector")]
        grouping: GroupingArg,
    },
    /// Momentum vs contrarian conflict.
    Style,
    /// Render tables and curves from the run's results.
    Report,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    let outcome = runtime.block_on(commands::dispatch(cli.common, cli.command));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
