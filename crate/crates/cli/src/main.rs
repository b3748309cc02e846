use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use popk::{PopularityLogic, PopularityMetric};
use popk_cli::commands;
use popk_cli::{CliError, Context, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "popk", version, about = "Popularity-aware negative sampling for news recommendation")]
struct Cli {
    /// JSON run configuration. Defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Popular negatives per positive.
    #[arg(long, global = true)]
    popk: Option<usize>,
    /// `acc` or `ptb`.
    #[arg(long, global = true, value_parser = |s: &str| s.parse::<PopularityLogic>())]
    logic: Option<PopularityLogic>,
    /// `clicks`, `click_ratio` or `click_variation`.
    #[arg(long, global = true, value_parser = |s: &str| s.parse::<PopularityMetric>())]
    metric: Option<PopularityMetric>,
    /// Negatives per positive.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the corpus and print per-split summaries.
    Ingest,
    /// Tally hourly clicks and views over the train split into index.tsv.
    Index,
    /// Write a synthetic corpus with known popularity and preferences.
    Synth,
    /// Train one model and write model.json plus train_log.tsv.
    Train {
        /// Also write the epoch-0 training samples to samples.tsv.
        #[arg(long)]
        dump_samples: bool,
    },
    /// Score the test split with a trained model into report.json.
    Eval,
    /// Train and evaluate the baseline and every configured variant.
    Sweep,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        seed: cli.seed,
        popk: cli.popk,
        logic: cli.logic,
        metric: cli.metric,
        k: cli.k,
        jobs: cli.jobs,
        out: cli.out,
    });
    let ctx = Context::new(config)?;
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Index => commands::index(&ctx),
        Command::Synth => commands::synth(&ctx),
        Command::Train { dump_samples } => commands::train_cmd(&ctx, dump_samples),
        Command::Eval => commands::eval_cmd(&ctx),
        Command::Sweep => commands::sweep(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
