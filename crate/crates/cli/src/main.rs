use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mobipose_cli::commands::{self, parse_pose, Overrides};
use mobipose_cli::config::{Profile, RunConfig};
use mobipose_cli::error::CliError;

/// Policy-aware base pose search over Gaussian-splat scenes.
#[derive(Debug, Parser)]
#[command(name = "mobipose", version)]
struct Cli {
    /// Run configuration (TOML). Without it the built-in synthetic room is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated rig names to score with (several means max-over-views).
    #[arg(long, global = true, value_delimiter = ',')]
    views: Option<Vec<String>>,
    /// Also optimize the camera height offset.
    #[arg(long, global = true)]
    height_opt: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search for the best base pose; writes trace.jsonl, summary.json, score_map.png.
    Optimize,
    /// Spatial and visual feasibility metrics.
    Metrics,
    /// Render one pose for debugging.
    Render {
        /// Base pose as x,y,theta (meters, radians).
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        /// Camera height offset in meters.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        height: f64,
    },
    /// Build and save the occupancy grid.
    BuildGrid,
    /// Run the synthetic evaluation suite.
    Evaluate,
    /// Draw a score map from a saved trace.
    ScoreMap {
        #[arg(long)]
        trace: PathBuf,
        /// Grid file; the configured scene's grid when absent.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        oracle: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        start: Option<String>,
    },
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ov = Overrides { seed: cli.seed, profile: cli.profile, out: cli.out, views: cli.views, height_opt: cli.height_opt };
    match cli.command {
        Command::Optimize => commands::cmd_optimize(&cfg, &ov),
        Command::Metrics => commands::cmd_metrics(&cfg, &ov),
        Command::Render { pose, height } => commands::cmd_render(&cfg, &ov, &parse_pose(&pose)?, height),
        Command::BuildGrid => commands::cmd_build_grid(&cfg, &ov),
        Command::Evaluate => commands::cmd_evaluate(&cfg, &ov),
        Command::ScoreMap { trace, grid, oracle, start } => {
            let oracle = oracle.as_deref().map(parse_pose).transpose()?;
            let start = start.as_deref().map(parse_pose).transpose()?;
            commands::cmd_score_map(&cfg, &ov, &trace, grid.as_deref(), oracle, start)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOBIPOSE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
