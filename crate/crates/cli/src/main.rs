//! `lanemap` command line: simulate synthetic scenarios, fuse frame streams
//! into vectorized local maps, evaluate against groundtruth, profile
//! per-stage runtime and sweep parameters.
//!
//! Exit codes: 0 success, 2 configuration error, 3 IO error, 4 data
//! validation error. Log verbosity via the `LANEMAP_LOG` environment
//! variable (error, warn, info, debug, trace).

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lanemap", version, about = "Online vectorized local map fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: frame stream plus groundtruth map.
    Simulate {
        /// Scenario file (JSON: {"scenario": {..}, "noise": {..}, "frames": N}).
        #[arg(long)]
        spec: std::path::PathBuf,
        /// Output directory; writes frames.jsonl and gt.jsonl.
        #[arg(long)]
        output: std::path::PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fuse a frame stream into a snapshot stream.
    Run {
        /// Frame stream path.
        #[arg(long)]
        input: std::path::PathBuf,
        /// Config file (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        /// Snapshot stream output path.
        #[arg(long)]
        output: std::path::PathBuf,
        /// Config override, may repeat: --set key=value (dotted paths).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output window override: "lat_min,lat_max,lon_min,lon_max".
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
        /// Also writes the effective config to this path.
        #[arg(long)]
        dump_config: Option<std::path::PathBuf>,
    },
    /// Score a snapshot stream (fused map) or a raw frame stream against a
    /// groundtruth map; the input kind is auto-detected.
    Eval {
        #[arg(long)]
        input: std::path::PathBuf,
        /// Groundtruth map path (typed polyline records).
        #[arg(long)]
        gt: std::path::PathBuf,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        /// Metrics report output (JSON); stdout table is always printed.
        #[arg(long)]
        output: Option<std::path::PathBuf>,
        /// Per-frame metrics time series output (JSON lines).
        #[arg(long)]
        per_frame: Option<std::path::PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
    },
    /// Per-stage wall-time distribution over a frame stream.
    Profile {
        #[arg(long)]
        input: std::path::PathBuf,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
        /// Profile report output (JSON).
        #[arg(long)]
        output: Option<std::path::PathBuf>,
    },
    /// Metrics table over a parameter grid (cross product of --vary axes).
    Ablate {
        #[arg(long)]
        input: std::path::PathBuf,
        #[arg(long)]
        gt: std::path::PathBuf,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        /// Sweep axis, may repeat: --vary key=v1,v2,...
        #[arg(long = "vary", value_name = "KEY=V1,V2")]
        vary: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
        /// Sweep rows output (JSON).
        #[arg(long)]
        output: Option<std::path::PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LANEMAP_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { spec, output, seed } => commands::simulate(&spec, &output, seed),
        Command::Run { input, config, output, set, window, dump_config } => {
            commands::run(&input, config.as_deref(), &output, &set, window.as_deref(), dump_config.as_deref())
        }
        Command::Eval { input, gt, config, output, per_frame, set, window } => commands::eval(
            &input,
            &gt,
            config.as_deref(),
            output.as_deref(),
            per_frame.as_deref(),
            &set,
            window.as_deref(),
        ),
        Command::Profile { input, config, set, window, output } => {
            commands::profile(&input, config.as_deref(), &set, window.as_deref(), output.as_deref())
        }
        Command::Ablate { input, gt, config, vary, set, window, output } => commands::ablate(
            &input,
            &gt,
            config.as_deref(),
            &vary,
            &set,
            window.as_deref(),
            output.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
