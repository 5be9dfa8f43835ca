//! C ABI over the contextvae forecaster.
//!
//! Objects cross the boundary as opaque handles released with their
//! `*_free` function. Every fallible call returns a [`CvaeStatus`]; the
//! message of the last failure on the calling thread is available from
//! [`cvae_last_error`]. Positions are interleaved `x, y` doubles in the
//! world frame.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use contextvae::baselines::constant_velocity_predict;
use contextvae::checkpoint::load_checkpoint;
use contextvae::data::{build_dataset, load_scenes, FutureTruth, ObservationWindow, WindowSpec};
use contextvae::geometry::Vec2;
use contextvae::metrics::{min_ade, min_fde};
use contextvae::model::{ContextVae, PredictionSet};
use contextvae::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvaeStatus {
    Ok = 0,
    Other = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Trained model loaded from a checkpoint.
pub struct CvaeModel(ContextVae);

/// Observation windows with their future ground truth.
pub struct CvaeDataset(Vec<(ObservationWindow, FutureTruth)>);

/// Sampled futures of one window.
pub struct CvaePredictions(PredictionSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CvaeStatus {
    match e.exit_code() {
        2 => CvaeStatus::Config,
        3 => CvaeStatus::Data,
        4 => CvaeStatus::Numerical,
        _ => CvaeStatus::Other,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> CvaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CvaeStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CvaeStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            let status = status_of(&e);
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CvaeStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidInput(format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T, what: &'static str) -> FfiResult {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn read_points(xy: *const f64, n: usize, what: &'static str) -> Result<Vec<Vec2>, Failure> {
    if xy.is_null() {
        return Err(Failure::Null(what));
    }
    let s = std::slice::from_raw_parts(xy, 2 * n);
    Ok(s.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect())
}

unsafe fn write_points(points: impl IntoIterator<Item = Vec2>, out: *mut f64, capacity: usize) -> FfiResult {
    let points: Vec<Vec2> = points.into_iter().collect();
    if 2 * points.len() > capacity {
        return Err(Error::InvalidInput(format!("output buffer holds {capacity} doubles, need {}", 2 * points.len())).into());
    }
    if out.is_null() {
        return Err(Failure::Null("output buffer"));
    }
    let s = std::slice::from_raw_parts_mut(out, 2 * points.len());
    for (c, p) in s.chunks_exact_mut(2).zip(points) {
        c[0] = p.x;
        c[1] = p.y;
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cvae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cvae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the model stored in a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cvae_model_load(path: *const c_char, out: *mut *mut CvaeModel) -> CvaeStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let (trainer, _) = load_checkpoint(path)?;
        write_out(out, CvaeModel(trainer.model), "out")
    })
}

/// # Safety
/// `model` must come from [`cvae_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cvae_model_free(model: *mut CvaeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Windows of `t` observed and `horizon` future frames from a scene file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cvae_dataset_load(
    path: *const c_char,
    t: usize,
    horizon: usize,
    radius: f64,
    downsample: usize,
    out: *mut *mut CvaeDataset,
) -> CvaeStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let scenes = load_scenes(path)?;
        let data = build_dataset(&scenes, &WindowSpec::fixed(t, horizon, radius), downsample)?;
        write_out(out, CvaeDataset(data), "out")
    })
}

/// Number of windows; 0 for a null handle.
///
/// # Safety
/// `dataset` must come from [`cvae_dataset_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cvae_dataset_len(dataset: *const CvaeDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Copies the observed (`observed = 1`) or future (`observed = 0`) world
/// positions of window `index` into `out_xy`, and their count into `out_len`.
///
/// # Safety
/// `out_xy` must hold `capacity` doubles; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvae_dataset_positions(
    dataset: *const CvaeDataset,
    index: usize,
    observed: i32,
    out_xy: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> CvaeStatus {
    guard(|| {
        let d = non_null(dataset, "dataset")?;
        let (w, f) = d
            .0
            .get(index)
            .ok_or_else(|| Error::NotFound(format!("window {index} of {}", d.0.len())))?;
        let points: Vec<Vec2> = if observed != 0 {
            w.positions.iter().map(|&p| w.frame.to_world(p)).collect()
        } else {
            f.world_positions(&w.frame)
        };
        if out_len.is_null() {
            return Err(Failure::Null("out_len"));
        }
        *out_len = points.len();
        write_points(points, out_xy, capacity)
    })
}

/// # Safety
/// `dataset` must come from [`cvae_dataset_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cvae_dataset_free(dataset: *mut CvaeDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Samples `k` futures of `horizon` steps for window `index`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvae_predict(
    model: *const CvaeModel,
    dataset: *const CvaeDataset,
    index: usize,
    k: usize,
    horizon: usize,
    seed: u64,
    out: *mut *mut CvaePredictions,
) -> CvaeStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let d = non_null(dataset, "dataset")?;
        let (w, _) = d
            .0
            .get(index)
            .ok_or_else(|| Error::NotFound(format!("window {index} of {}", d.0.len())))?;
        let p = m.0.sample_predictions(w, k, horizon, seed)?;
        write_out(out, CvaePredictions(p), "out")
    })
}

/// # Safety
/// `p` must come from [`cvae_predict`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cvae_predictions_k(p: *const CvaePredictions) -> usize {
    p.as_ref().map_or(0, |p| p.0.k())
}

/// # Safety
/// `p` must come from [`cvae_predict`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cvae_predictions_horizon(p: *const CvaePredictions) -> usize {
    p.as_ref().map_or(0, |p| p.0.horizon())
}

/// Copies all trajectories as `k × horizon × 2` doubles.
///
/// # Safety
/// `out_xy` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn cvae_predictions_copy(p: *const CvaePredictions, out_xy: *mut f64, capacity: usize) -> CvaeStatus {
    guard(|| {
        let p = non_null(p, "predictions")?;
        write_points(p.0.trajectories.iter().flatten().copied(), out_xy, capacity)
    })
}

/// # Safety
/// `p` must come from [`cvae_predict`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cvae_predictions_free(p: *mut CvaePredictions) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Best-of-k average (`final_step = 0`) or final (`final_step = 1`)
/// displacement error of `k × horizon` predictions against `horizon` truths.
///
/// # Safety
/// `predictions_xy` must hold `2·k·horizon` doubles, `truth_xy` `2·horizon`.
#[no_mangle]
pub unsafe extern "C" fn cvae_min_displacement_error(
    predictions_xy: *const f64,
    k: usize,
    truth_xy: *const f64,
    horizon: usize,
    final_step: i32,
    out: *mut f64,
) -> CvaeStatus {
    guard(|| {
        let flat = read_points(predictions_xy, k * horizon, "predictions_xy")?;
        let truth = read_points(truth_xy, horizon, "truth_xy")?;
        let preds: Vec<Vec<Vec2>> = flat.chunks(horizon.max(1)).map(<[Vec2]>::to_vec).collect();
        let v = if final_step != 0 {
            min_fde(&preds, &truth)?
        } else {
            min_ade(&preds, &truth)?
        };
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = v;
        Ok(())
    })
}

/// Constant-velocity extrapolation of `n` observed positions.
///
/// # Safety
/// `observed_xy` must hold `2·n` doubles and `out_xy` `2·horizon`.
#[no_mangle]
pub unsafe extern "C" fn cvae_constant_velocity(
    observed_xy: *const f64,
    n: usize,
    horizon: usize,
    out_xy: *mut f64,
) -> CvaeStatus {
    guard(|| {
        let obs = read_points(observed_xy, n, "observed_xy")?;
        let pred = constant_velocity_predict(&obs, horizon)?;
        write_points(pred, out_xy, 2 * horizon)
    })
}
