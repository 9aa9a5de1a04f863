//! Command-line driver for the odometry engine.
//!
//! `odom odometry` estimates a trajectory from a sweep directory or a
//! synthetic scene, `odom evaluate` scores a trajectory against ground truth,
//! `odom synth` writes synthetic sweeps, and `odom ablate` compares
//! loss-subset variants on one input.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_set, resolve, Layers};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "odom", version, about = "Self-supervised LiDAR odometry by direct loss minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a trajectory and write poses, per-pair diagnostics and a manifest.
    Odometry(RunArgs),
    /// Score an estimated trajectory against ground truth.
    Evaluate(EvalArgs),
    /// Render a synthetic sequence as velodyne sweeps plus ground-truth poses.
    Synth(SynthArgs),
    /// Compare loss-subset variants on the same input.
    Ablate(RunArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat `key = value` config file (a previous manifest works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set solver.step_size=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory of velodyne .bin sweeps (input.sweeps).
    #[arg(long)]
    sweeps: Option<PathBuf>,
    /// Synthetic scene spec with a [sequence] table (input.scene).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Ground-truth KITTI pose file (input.gt).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Output directory (output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Estimated KITTI pose file.
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth KITTI pose file.
    #[arg(long)]
    gt: PathBuf,
    /// Directory for drift.csv, summary.txt and trajectory.svg.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Segment lengths in meters, comma-separated (eval.lengths).
    #[arg(long)]
    lengths: Option<String>,
    /// Start-frame stride (eval.stride).
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML scene spec.
    #[arg(long)]
    spec: PathBuf,
    /// Number of frames; overrides the spec's [sequence] table.
    #[arg(long)]
    frames: Option<usize>,
    /// Per-frame sensor motion `tx,ty,tz,roll,pitch,yaw` (m, deg).
    #[arg(long, allow_hyphen_values = true)]
    motion: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn layers(args: &ConfigArgs, env: &[(String, String)], extra: Vec<(String, String)>) -> Result<Layers, CliError> {
    let mut sets = args.sets.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>, _>>()?;
    sets.extend(extra);
    Ok(Layers { file: args.config.clone(), env: env.to_vec(), sets })
}

fn path_set(key: &str, p: &Option<PathBuf>) -> Option<(String, String)> {
    p.as_ref().map(|p| (key.to_string(), p.display().to_string()))
}

/// Runs the CLI with explicit arguments (including the program name) and
/// environment. Help and version requests succeed after printing.
pub fn run<I, T>(args: I, env: &[(String, String)]) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::config(e.render().to_string()));
        }
    };
    match cli.command {
        Command::Odometry(a) => {
            let (table, cfg) = resolve(&run_layers(&a, env)?)?;
            commands::cmd_odometry(&table, &cfg)
        }
        Command::Ablate(a) => {
            let (table, cfg) = resolve(&run_layers(&a, env)?)?;
            commands::cmd_ablate(&table, &cfg).map(|_| ())
        }
        Command::Evaluate(a) => {
            let mut extra = Vec::new();
            if let Some(l) = &a.lengths {
                extra.push(("eval.lengths".to_string(), l.clone()));
            }
            if let Some(s) = a.stride {
                extra.push(("eval.stride".to_string(), s.to_string()));
            }
            let (_, cfg) = resolve(&layers(&a.config, env, extra)?)?;
            commands::cmd_evaluate(&a.est, &a.gt, a.out.as_deref(), &cfg).map(|_| ())
        }
        Command::Synth(a) => {
            let motion = a.motion.as_deref().map(io::parse_motion).transpose()?;
            commands::cmd_synth(&commands::SynthRequest { spec: a.spec, frames: a.frames, motion, out: a.out })
        }
    }
}

fn run_layers(a: &RunArgs, env: &[(String, String)]) -> Result<Layers, CliError> {
    let extra = [
        path_set("input.sweeps", &a.sweeps),
        path_set("input.scene", &a.scene),
        path_set("input.gt", &a.gt),
        path_set("output.dir", &a.out),
    ]
    .into_iter()
    .flatten()
    .collect();
    layers(&a.config, env, extra)
}

/// Process entry point: returns the exit code.
pub fn main_with<I, T>(args: I, env: &[(String, String)]) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(args, env) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("odom: {e}");
            e.exit_code()
        }
    }
}
