//! Reproducible bin-picking experiments from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "binpick",
    about = "Simulated randomized bin-picking experiments",
    version
)]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth scene and write it as JSON.
    GenScene {
        #[arg(long)]
        seed: Option<u64>,
        /// Object count override.
        #[arg(long)]
        count: Option<usize>,
        /// Part name override (catalog entry).
        #[arg(long)]
        shape: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ray-cast a depth capture from one sensor pose candidate.
    Capture {
        #[arg(long)]
        scene: PathBuf,
        /// Index into the candidate pose list.
        #[arg(long)]
        pose_index: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the best sensor pose (first-view rule, or next-view when a
    /// grid dump is given).
    PlanView {
        #[arg(long)]
        scene: PathBuf,
        /// Occupancy grid CSV from a previous trial.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment a cloud and estimate object poses, reusing previous
    /// estimates where the cloud did not change.
    Detect {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        /// Previous estimates JSON.
        #[arg(long)]
        prev: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run labeled pick attempts and write the training CSV.
    Collect {
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the random forest on a training CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on a labeled CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Held-out accuracy as a function of training-set size.
    LearningCurve {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        holdout: PathBuf,
        /// Comma-separated subset sizes.
        #[arg(long, default_value = "10,20,30,40,50,75,100,125,150")]
        sizes: String,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run picking trials on a scene until it is empty (or trial cap).
    RunEpisode {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        max_trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute precision/recall/F from episode records.
    Evaluate {
        /// Record files (JSON lines); simple `*` patterns are expanded.
        #[arg(long, num_args = 1.., required = true)]
        records: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time pose detection across object counts and thread counts.
    BenchDetect {
        #[arg(long, default_value_t = 9)]
        max_objects: usize,
        /// Comma-separated thread counts.
        #[arg(long, default_value = "1,2,4,8")]
        threads: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => match config::RunConfig::load(path) {
            Ok(c) => c,
            Err(message) => {
                eprintln!("config error: {message}");
                return ExitCode::from(2);
            }
        },
        None => config::RunConfig::default(),
    };
    if let Err(message) = config.validate() {
        eprintln!("config error: {message}");
        return ExitCode::from(2);
    }

    let result = match cli.command {
        Command::GenScene {
            seed,
            count,
            shape,
            out,
        } => commands::gen_scene(&config, seed, count, shape, &out),
        Command::Capture {
            scene,
            pose_index,
            seed,
            out,
        } => commands::capture(&config, &scene, pose_index, seed, &out),
        Command::PlanView { scene, grid, out } => {
            commands::plan_view(&config, &scene, grid.as_deref(), out.as_deref())
        }
        Command::Detect {
            scene,
            cloud,
            prev,
            threads,
            out,
        } => commands::detect(&config, &scene, &cloud, prev.as_deref(), threads, &out),
        Command::Collect { trials, seed, out } => {
            commands::collect(&config, trials, seed, &out)
        }
        Command::Train { data, seed, out } => commands::train(&config, &data, seed, &out),
        Command::Eval { model, data } => commands::eval(&config, &model, &data),
        Command::LearningCurve {
            pool,
            holdout,
            sizes,
            repeats,
            seed,
            out,
        } => commands::learning_curve(&config, &pool, &holdout, &sizes, repeats, seed, &out),
        Command::RunEpisode {
            scene,
            model,
            views,
            alpha,
            max_trials,
            out,
        } => commands::run_episode(&config, &scene, &model, views, alpha, max_trials, &out),
        Command::Evaluate { records, out } => commands::evaluate(&records, out.as_deref()),
        Command::BenchDetect {
            max_objects,
            threads,
            out,
        } => commands::bench_detect(&config, max_objects, &threads, &out),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CommandError::Config(message)) => {
            eprintln!("config error: {message}");
            ExitCode::from(2)
        }
        Err(commands::CommandError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(3)
        }
    }
}
