//! Command-line front end for the prompt-trojan pipeline.
//!
//! One TOML config drives everything; subcommands run the full pipeline,
//! individual stages (resumable through the run directory), the two
//! baselines, and the evaluation/defense harness. Exit codes: 0 success,
//! 2 usage or config error, 3 query budget exhausted, 4 victim unreachable,
//! 5 internal error.

mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Overrides;

#[derive(Parser)]
#[command(name = "promptrojan", version, about = "Black-box prompt-trojan search and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the query budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, budget: self.budget, out_dir: self.out.clone() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: seed tuning, trigger search, progressive
    /// poisoning, then report on the test split.
    Run(Common),
    /// Run (or resume) only the prompt-seed tuning stage.
    TuneSeed(Common),
    /// Run the trigger search against the stored seed prompt.
    SearchTrigger(Common),
    /// Run progressive poisoning against the stored seed and trigger.
    Poison(Common),
    /// Single-shot baselines.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Which baseline to run.
        #[arg(long, value_enum)]
        kind: BaselineKind,
        /// Fixed trigger text for the p-only baseline.
        #[arg(long, default_value = "cf")]
        trigger: String,
    },
    /// Evaluate stored artifacts on the test split (ACC, ASR, confusion).
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Artifacts file; defaults to `<out_dir>/artifacts.json`.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Evaluate one or more artifacts files against several victims.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Artifacts file(s); defaults to `<out_dir>/artifacts.json`.
        #[arg(long)]
        artifacts: Vec<PathBuf>,
        /// Simulated victim spec files to attack (at least 2 victims in
        /// total, the config's own victim included).
        #[arg(long = "victim")]
        victims: Vec<PathBuf>,
    },
    /// Token-removal detection plus trimming mitigation on stored artifacts.
    Defend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// Accuracy drop (absolute) below which a removal looks free.
        #[arg(long, default_value_t = 0.15)]
        threshold: f64,
    },
    /// Re-run the trigger stage at several lengths and tabulate ACC/ASR.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated trigger lengths, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3])]
        lengths: Vec<usize>,
    },
}

/// `joint` trains prompt and trigger policies simultaneously on the combined
/// objective; `p-only` trains a single prompt policy against a fixed trigger.
#[derive(clap::ValueEnum, Clone, Copy)]
enum BaselineKind {
    Joint,
    POnly,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(common) => commands::run_pipeline(&common.config, &common.overrides()),
        Command::TuneSeed(common) => commands::tune_seed(&common.config, &common.overrides()),
        Command::SearchTrigger(common) => {
            commands::search_trigger(&common.config, &common.overrides())
        }
        Command::Poison(common) => commands::poison(&common.config, &common.overrides()),
        Command::Baseline { common, kind, trigger } => match kind {
            BaselineKind::Joint => commands::baseline_joint(&common.config, &common.overrides()),
            BaselineKind::POnly => {
                commands::baseline_p_only(&common.config, &common.overrides(), &trigger)
            }
        },
        Command::Evaluate { common, artifacts } => {
            commands::evaluate(&common.config, &common.overrides(), artifacts.as_deref())
        }
        Command::Transfer { common, artifacts, victims } => {
            commands::transfer(&common.config, &common.overrides(), &artifacts, &victims)
        }
        Command::Defend { common, artifacts, threshold } => {
            commands::defend(&common.config, &common.overrides(), artifacts.as_deref(), threshold)
        }
        Command::Ablate { common, lengths } => {
            commands::ablate(&common.config, &common.overrides(), &lengths)
        }
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
