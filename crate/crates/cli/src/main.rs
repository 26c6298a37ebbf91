use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use framepred::Result;
use framepred_cli::commands::{cmd_eval, cmd_predict, cmd_synth, cmd_train};
use framepred_cli::config::Overrides;
use framepred_cli::exit_code;

/// Next-frame video prediction: synthesize data, train, predict, evaluate.
///
/// Settings come from built-in defaults, then the preset, then the config
/// file, then flags (later wins). Exit codes: 0 success, 2 configuration
/// error, 3 data error, 4 numerical divergence.
#[derive(Parser)]
#[command(name = "framepred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Sectioned `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic clips as PGM/PPM directories.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Dataset kind: bouncing or bimodal.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train a model; writes checkpoints and a loss log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Loss preset: l2, l1, gdl-l1, gdl-l2, adv, adv-gdl.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Predict future frames of one clip and write an image grid.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a checkpoint and the last-input baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn overrides(common: &Common, preset: Option<String>) -> Overrides {
    Overrides {
        seed: common.seed,
        preset,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, preset } => {
            cmd_synth(
                common.config.as_deref(),
                &overrides(&common, preset),
                &common.out,
            )?;
            println!("wrote {}", common.out.display());
        }
        Command::Train { common, preset } => {
            let last = cmd_train(
                common.config.as_deref(),
                &overrides(&common, preset),
                &common.out,
            )?;
            println!("final checkpoint {}", last.display());
        }
        Command::Predict { common, checkpoint } => {
            cmd_predict(
                common.config.as_deref(),
                &overrides(&common, None),
                &common.out,
                &checkpoint,
            )?;
            println!("wrote {}", common.out.display());
        }
        Command::Eval { common, checkpoint } => {
            let summary = cmd_eval(
                common.config.as_deref(),
                &overrides(&common, None),
                &common.out,
                &checkpoint,
            )?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
