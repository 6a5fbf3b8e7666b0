//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use narrarl_core::rng::{self, Stream};
use narrarl_core::{generate_grid, greedy_rollout, init_qtable, render_frame, train, Position, RlParams};
use serde_json::json;

use crate::experiment::{self, ExperimentConfig, ExperimentError};
use crate::files::{self, FileError};
use crate::trace::{self, TraceError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "narrarl", version, about = "Gridworld Q-learning with pluggable decision arbiters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a solvable grid and write it as JSON.
    Gen {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        density: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a Q-table on a grid file without any arbiter.
    Train {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Run one experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run several configs, up to `--parallel` at once.
    Sweep {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Recompute metrics from a decision log.
    Report {
        #[arg(long)]
        log: PathBuf,
    },
    /// Draw a grid, optionally with one logged episode's path.
    Render {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, requires = "episode")]
        log: Option<PathBuf>,
        #[arg(long, requires = "log")]
        episode: Option<usize>,
    },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        match e {
            FileError::Io { .. } if !e.is_not_found() => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match &e {
            TraceError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Runtime(format!("writing output: {e}")))
}

fn write_json_out(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_out(out, &text)
}

/// Parse `args` (including the program name) and execute. Data goes to `out`,
/// diagnostics to `err`. Returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(rendered.as_bytes());
                EXIT_VALIDATION
            } else {
                let _ = out.write_all(rendered.as_bytes());
                EXIT_OK
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Gen { size, density, seed, out: path } => {
            let grid = generate_grid(size, density, seed).map_err(|e| CliError::Validation(e.to_string()))?;
            files::save_grid(&path, &grid)?;
            write_json_out(out, &json!({ "path": path, "n": grid.n(), "obstacles": grid.obstacles().len() }))
        }
        Command::Train { grid, episodes, seed, out: path, alpha, gamma, epsilon, max_steps } => {
            let grid = files::load_grid(&grid)?;
            let defaults = RlParams::defaults_for(grid.n(), episodes);
            let params = RlParams {
                alpha: alpha.unwrap_or(defaults.alpha),
                gamma: gamma.unwrap_or(defaults.gamma),
                epsilon: epsilon.unwrap_or(defaults.epsilon),
                max_steps: max_steps.unwrap_or(defaults.max_steps),
                episodes,
            };
            params.validate().map_err(|e| CliError::Validation(format!("--{}: {e}", e.field().replace('_', "-"))))?;
            let mut q = init_qtable(grid.n(), rng::derive_seed(seed, Stream::QInit));
            let history = train(&grid, &params, &mut q, &mut rng::stream_rng(seed, Stream::Actions));
            files::save_qtable(&path, &q)?;
            let rollout = greedy_rollout(&grid, &q, params.max_steps);
            let successes = history.iter().filter(|e| e.success).count();
            write_json_out(
                out,
                &json!({
                    "path": path,
                    "episodes": episodes,
                    "training_success_rate": successes as f64 / episodes.max(1) as f64,
                    "greedy_reached_goal": rollout.reached_goal,
                    "greedy_steps": rollout.steps(),
                }),
            )
        }
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config).map_err(|e| CliError::Validation(e.to_string()))?;
            let report = experiment::run_experiment(&config)?;
            write_json_out(out, &report)
        }
        Command::Sweep { configs, parallel } => {
            if parallel == 0 {
                return Err(CliError::Validation("--parallel must be at least 1".into()));
            }
            let loaded = configs
                .iter()
                .map(|p| ExperimentConfig::load(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let results = experiment::sweep(&loaded, parallel).map_err(|e| CliError::Validation(e.to_string()))?;
            let mut failed = 0;
            let summary: Vec<_> = configs
                .iter()
                .zip(&results)
                .map(|(path, result)| match result {
                    Ok(r) => json!({ "config": path, "ok": true, "log_path": r.config.log_path, "metrics": r.metrics }),
                    Err(e) => {
                        failed += 1;
                        let _ = writeln!(err, "error: {}: {e}", path.display());
                        json!({ "config": path, "ok": false, "error": e.to_string() })
                    }
                })
                .collect();
            write_json_out(out, &summary)?;
            if failed > 0 {
                return Err(CliError::Runtime(format!("{failed} of {} runs failed", configs.len())));
            }
            Ok(())
        }
        Command::Report { log } => write_json_out(out, &trace::report_from_log(&log)?),
        Command::Render { grid, log, episode } => {
            let grid = files::load_grid(&grid)?;
            let trajectory = match (log, episode) {
                (Some(log), Some(episode)) => episode_path(&log, episode)?,
                _ => Vec::new(),
            };
            let frame = render_frame(&grid, &trajectory).map_err(|e| CliError::Validation(e.to_string()))?;
            write_out(out, &frame.to_string())
        }
    }
}

/// Positions visited in `episode`, ending with where the agent stopped.
fn episode_path(log: &Path, episode: usize) -> Result<Vec<Position>, CliError> {
    let records: Vec<_> = trace::read_log(log)?.into_iter().filter(|r| r.episode == episode).collect();
    let last = records
        .last()
        .ok_or_else(|| CliError::Validation(format!("{}: no records for episode {episode}", log.display())))?;
    let mut path: Vec<Position> = records.iter().map(|r| r.position).collect();
    path.push(last.next_position);
    Ok(path)
}
