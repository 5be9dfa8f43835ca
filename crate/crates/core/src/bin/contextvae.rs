use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use contextvae::commands::{self, PredictRequest};
use contextvae::config::RunConfig;
use contextvae::Result;

/// Context-aware timewise VAE for vehicle trajectory forecasting.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic junction scenes as NDJSON.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Shorthand for `--set generate.scenes=N`.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Train on `data.train`, checkpointing into `out_dir` every epoch.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write minADE/minFDE reports for `data.test` into `out_dir`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also score constant-velocity and Kalman (default: `eval.baselines`).
        #[arg(long)]
        baselines: bool,
    },
    /// Sample futures for one target of one `data.test` scene.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: String,
        #[arg(long)]
        target: u64,
        /// First observed frame of the window.
        #[arg(long)]
        start: Option<usize>,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        /// Sampling seed (default: the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// PredictionSet JSON output.
        #[arg(long)]
        out: PathBuf,
        /// Optional PNG figure.
        #[arg(long)]
        figure: Option<PathBuf>,
        /// Draw attention weights on the figure.
        #[arg(long)]
        attention: bool,
        /// Blend GradCAM map saliency into the figure.
        #[arg(long)]
        saliency: bool,
        /// Output pixels per raster pixel.
        #[arg(long, default_value_t = 3)]
        scale: usize,
    },
    /// Render a target's local raster as a PNG (channels 0/1/2 as R/G/B).
    RasterizePreview {
        /// Scene file (default: `data.test`).
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        scene: String,
        #[arg(long)]
        target: u64,
        /// Frame index defining the local frame.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        /// Paint the anchor pixel white.
        #[arg(long)]
        mark_anchor: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides;
    if let Command::Generate { scenes: Some(n), .. } = &cli.command {
        overrides.push(format!("generate.scenes={n}"));
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Generate { out, .. } => commands::cmd_generate(&config, &out),
        Command::Train { resume } => commands::cmd_train(&config, resume.as_deref()).map(|_| ()),
        Command::Eval { checkpoint, baselines } => {
            commands::cmd_eval(&config, &checkpoint, baselines || config.eval.baselines).map(|_| ())
        }
        Command::Predict {
            checkpoint,
            scene,
            target,
            start,
            k,
            seed,
            out,
            figure,
            attention,
            saliency,
            scale,
        } => {
            let request = PredictRequest {
                scene_id: scene,
                target_id: target,
                start,
                k,
                seed: seed.unwrap_or(config.seed),
                out,
                figure,
                attention,
                saliency,
                scale,
            };
            commands::cmd_predict(&config, &checkpoint, &request).map(|_| ())
        }
        Command::RasterizePreview {
            scenes,
            scene,
            target,
            frame,
            out,
            mark_anchor,
        } => {
            let file = match scenes {
                Some(p) => p,
                None => RunConfig::require_file(&config.data.test, "test data")?,
            };
            commands::cmd_rasterize_preview(&config, &file, &scene, target, frame, &out, mark_anchor)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
