use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Locate task boundaries in videos by iterative visual prompting.
#[derive(Parser)]
#[command(name = "tpivot", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Localize the given tasks in one video and write a result JSON.
    Localize(commands::LocalizeArgs),
    /// Score localization on a dataset directory against its annotations.
    Evaluate(commands::EvaluateArgs),
    /// Like `evaluate`, but defaults to every grid size 2x2..6x6 and every style.
    Sweep(commands::EvaluateArgs),
    /// Generate a synthetic colour-coded dataset.
    Synth(commands::SynthArgs),
    /// Convert a Breakfast-style label file to annotation JSON.
    ConvertAnnotations(commands::ConvertArgs),
    /// Render the grid the search would show for one window.
    DumpGrid(commands::DumpGridArgs),
}

/// Settings shared by commands that run searches. Flags win over the
/// config file, which wins over built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// http, oracle, noisy-oracle or replay.
    #[arg(long)]
    backend: Option<String>,
    /// Longest side of the grid image in pixels.
    #[arg(long)]
    canvas_px: Option<u32>,
    /// Narrowing passes after the first full-window pass.
    #[arg(long)]
    iterations: Option<u32>,
    /// Keep narrowing until adjacent frames are sampled.
    #[arg(long)]
    until_frame_level: bool,
    #[arg(long)]
    answer_retries: Option<u32>,
    /// Search each of N equal slices of the video separately.
    #[arg(long)]
    split_segments: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Boundary noise of the noisy oracle, in seconds.
    #[arg(long)]
    noise_std: Option<f64>,
    /// Reply store to serve from (replay backend).
    #[arg(long)]
    replay_store: Option<PathBuf>,
    /// Append raw replies to this store.
    #[arg(long)]
    record_store: Option<PathBuf>,
    /// Chat-completions endpoint URL (http backend).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable that holds the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Record wall-clock time in results (makes them non-reproducible).
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Localize(a) => commands::localize(a),
        Command::Evaluate(a) => commands::evaluate(a, false),
        Command::Sweep(a) => commands::evaluate(a, true),
        Command::Synth(a) => commands::synth(a),
        Command::ConvertAnnotations(a) => commands::convert(a),
        Command::DumpGrid(a) => commands::dump_grid(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
