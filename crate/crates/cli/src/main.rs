//! Command-line front end for the tbm3d transport-based morphometry
//! pipeline: embed, analyze, visualize, intrinsic-mean, evaluate, phantom.

mod commands;
mod config;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "tbm3d", version, about = "3D transport-based morphometry")]
struct Cli {
    /// Optional JSON pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Solve transport maps against a reference and write feature rows.
    Embed(commands::embed::Args),
    /// Fit PCA plus a chosen model on embedded features and score it.
    Analyze(commands::analyze::Args),
    /// Render mode montages, geodesics, projections, ROC, or confusion.
    Visualize(commands::visualize::Args),
    /// Average transport maps into a representative volume.
    IntrinsicMean(commands::intrinsic_mean::Args),
    /// Embed a cohort once and score classifiers over repeated splits.
    Evaluate(commands::evaluate::Args),
    /// Generate a synthetic ellipsoid cohort with a manifest.
    Phantom(commands::phantom::Args),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match PipelineConfig::load(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let outcome = match cli.command {
        Command::Embed(args) => commands::embed::run(args, &cfg),
        Command::Analyze(args) => commands::analyze::run(args, &cfg),
        Command::Visualize(args) => commands::visualize::run(args, &cfg),
        Command::IntrinsicMean(args) => commands::intrinsic_mean::run(args, &cfg),
        Command::Evaluate(args) => commands::evaluate::run(args, &cfg),
        Command::Phantom(args) => commands::phantom::run(args, &cfg),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
