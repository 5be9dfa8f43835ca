//! The pipeline steps behind the command-line tool.
//!
//! Every artifact carries the resolved config: JSON outputs under a
//! `config` key, text reports as a trailing `config` row, PNGs as a `tEXt`
//! chunk and scene files through a `<file>.config.json` sidecar.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{build_dataset, generate_scenarios, load_scenes, make_windows, save_scenes, downsample, FutureTruth, ObservationWindow, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{build_local_frame, Vec2};
use crate::map::rasterize;
use crate::metrics::{evaluate, ConstantVelocity, EvaluationReport, Kalman, Predictor};
use crate::model::{ContextVae, PredictionSet};
use crate::render::{prediction_figure, raster_image, write_png, Overlays};
use crate::train::{StepRecord, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.json";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::config("out_dir is not set"))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_dataset(config: &RunConfig, path: &Option<PathBuf>, what: &str) -> Result<Vec<(ObservationWindow, FutureTruth)>> {
    let path = RunConfig::require_file(path, what)?;
    let scenes = load_scenes(&path)?;
    build_dataset(&scenes, &config.data.window, config.data.downsample)
}

/// Writes `config.generate.scenes` synthetic scenes as NDJSON. The sidecar
/// also holds the generator's per-agent maneuver labels.
pub fn cmd_generate(config: &RunConfig, out: &Path) -> Result<()> {
    let generated = generate_scenarios(&config.generate.synthetic, config.generate.scenes)?;
    let (scenes, truths): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
    save_scenes(out, &scenes)?;
    write_json(
        &sidecar(out),
        &serde_json::json!({ "config": config.to_json(), "truth": truths }),
    )?;
    log::info!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(())
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
struct TrainLogFile<'a> {
    config: serde_json::Value,
    records: &'a [StepRecord],
}

/// Trains on `data.train`, checkpointing into `out_dir` after every epoch.
/// With `resume`, optimizer state and counters continue from that file.
pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> Result<(Trainer, Vec<StepRecord>)> {
    let dir = out_dir(config)?;
    let data = load_dataset(config, &config.data.train, "training data")?;
    let echo = config.to_json();
    let mut trainer = match resume {
        Some(path) => {
            let (trainer, _) = load_checkpoint(path)?;
            if trainer.model.config != config.model {
                log::warn!("resuming with the checkpoint's model config; [model] settings are ignored");
            }
            trainer
        }
        None => Trainer::new(ContextVae::new(config.model.clone())?, config.train.adam),
    };
    log::info!(
        "training {:?} on {} windows for {} epochs",
        trainer.model,
        data.len(),
        config.train.epochs
    );
    let ckpt = dir.join(CHECKPOINT_FILE);
    let log_path = dir.join(TRAIN_LOG_FILE);
    save_checkpoint(&ckpt, &trainer, &echo)?;
    let log = trainer.train(&data, &config.train, |t, log| {
        let last = log.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
        log::info!("epoch {} step {} loss {last:.4}", t.epoch, t.step);
        save_checkpoint(&ckpt, t, &echo)?;
        write_json(
            &log_path,
            &TrainLogFile {
                config: echo.clone(),
                records: &log.records,
            },
        )
    })?;
    write_json(
        &log_path,
        &TrainLogFile {
            config: echo.clone(),
            records: &log.records,
        },
    )?;
    Ok((trainer, log.records))
}

/// Scores the checkpoint (and optionally the baselines) on `data.test`,
/// writing `eval_<tag>.json` and `eval_<tag>.txt` into `out_dir`.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, baselines: bool) -> Result<Vec<EvaluationReport>> {
    let dir = out_dir(config)?;
    let (trainer, _) = load_checkpoint(checkpoint)?;
    let data = load_dataset(config, &config.data.test, "test data")?;
    let horizon = config.eval_horizon();
    let kalman = Kalman(config.ekf);
    let mut predictors: Vec<&dyn Predictor> = vec![&trainer.model];
    if baselines {
        predictors.push(&ConstantVelocity);
        predictors.push(&kalman);
    }
    let echo = config.to_json();
    let compact = serde_json::to_string(&echo).map_err(|e| Error::invalid(e.to_string()))?;
    let mut reports = Vec::new();
    for p in predictors {
        let report = evaluate(p, &data, &config.eval.k, horizon, config.seed)?;
        let stem = format!("eval_{}", report.model);
        write_json(
            &dir.join(format!("{stem}.json")),
            &serde_json::json!({ "config": echo, "report": report }),
        )?;
        std::fs::write(dir.join(format!("{stem}.txt")), format!("{}config\t{compact}\n", report.to_text()))?;
        for m in &report.aggregate {
            log::info!("{} minADE_{} {:.4} minFDE_{} {:.4}", report.model, m.k, m.min_ade, m.k, m.min_fde);
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Which window to predict and what to write.
#[derive(Debug, Clone, Serialize)]
pub struct PredictRequest {
    pub scene_id: String,
    pub target_id: u64,
    /// First observed frame; the first valid window when absent.
    pub start: Option<usize>,
    pub k: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub figure: Option<PathBuf>,
    pub attention: bool,
    pub saliency: bool,
    pub scale: usize,
}

#[derive(Debug, Serialize)]
struct PredictionFile<'a> {
    config: serde_json::Value,
    request: &'a PredictRequest,
    start: usize,
    observed: Vec<Vec2>,
    truth: Vec<Vec2>,
    prediction: &'a PredictionSet,
}

fn find_scene(scenes: Vec<SceneRecord>, id: &str) -> Result<SceneRecord> {
    scenes
        .into_iter()
        .find(|s| s.scene_id == id)
        .ok_or_else(|| Error::NotFound(format!("scene `{id}`")))
}

/// Samples `k` futures for one window of `data.test` with a checkpoint.
pub fn cmd_predict(config: &RunConfig, checkpoint: &Path, request: &PredictRequest) -> Result<PredictionSet> {
    let (trainer, _) = load_checkpoint(checkpoint)?;
    let path = RunConfig::require_file(&config.data.test, "test data")?;
    let scene = downsample(&find_scene(load_scenes(&path)?, &request.scene_id)?, config.data.downsample)?;
    let windows = make_windows(&scene, &[request.target_id], &config.data.window)?;
    let (window, future) = windows
        .into_iter()
        .find(|(w, _)| request.start.is_none_or(|s| w.start == s))
        .ok_or_else(|| {
            Error::NotFound(format!(
                "no valid window for target {} in scene `{}` at start {:?}",
                request.target_id, request.scene_id, request.start
            ))
        })?;
    let horizon = config.eval_horizon();
    let future = future.truncated(horizon);
    let prediction = trainer.model.sample_predictions(&window, request.k, horizon, request.seed)?;
    let echo = config.to_json();
    write_json(
        &request.out,
        &PredictionFile {
            config: echo.clone(),
            request,
            start: window.start,
            observed: window.positions.iter().map(|&p| window.frame.to_world(p)).collect(),
            truth: future.world_positions(&window.frame),
            prediction: &prediction,
        },
    )?;
    if let Some(fig) = &request.figure {
        let saliency = if request.saliency {
            Some(trainer.model.map_saliency(&window, &future)?)
        } else {
            None
        };
        let overlays = Overlays {
            attention: request.attention,
            saliency: saliency.as_ref(),
        };
        let img = prediction_figure(&window, Some(&future), &prediction, overlays, request.scale);
        write_png(fig, &img, &[("config", echo.to_string())])?;
    }
    Ok(prediction)
}

/// Raster of `scene_id` in the local frame of `target_id` at frame `t`.
pub fn cmd_rasterize_preview(
    config: &RunConfig,
    scene_file: &Path,
    scene_id: &str,
    target_id: u64,
    t: usize,
    out: &Path,
    mark_anchor: bool,
) -> Result<()> {
    let scene = find_scene(load_scenes(scene_file)?, scene_id)?;
    let anchor = scene.state(t, target_id)?;
    let raster = rasterize(&scene.vector_map, &build_local_frame(anchor)?);
    let img = raster_image(&raster, mark_anchor);
    write_png(out, &img, &[("config", config.to_json().to_string())])
}
