//! GradCAM over the last convolution stage of the map encoder.

use serde::{Deserialize, Serialize};

use super::encoder::MapEncoder;
use super::raster::{RasterMap, RASTER_SIZE};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    /// Row-major `224 × 224` values in [0, 1].
    pub values: Vec<f64>,
    /// Rectified class-activation grid before upsampling and normalization.
    pub coarse: Vec<f64>,
    pub coarse_grid: (usize, usize),
}

impl SaliencyMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * RASTER_SIZE + col]
    }

    /// Fraction of total saliency inside `mask` (row-major 224 × 224).
    pub fn mass_fraction(&self, mask: &[bool]) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let inside: f64 = self.values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        inside / total
    }
}

/// GradCAM of `head(features)` with respect to the last convolution stage.
///
/// `head` maps the `1 × F` feature variable to a scalar. Channel weights are
/// the spatially averaged gradients; the weighted activation sum is
/// rectified, bilinearly upsampled to raster size and scaled so its maximum
/// is one (an all-zero map stays zero).
pub fn grad_cam(
    store: &ParamStore,
    encoder: &MapEncoder,
    raster: &RasterMap,
    head: impl FnOnce(&mut Tape, Var) -> Var,
) -> Result<SaliencyMap> {
    if encoder.stages.is_empty() {
        return Err(Error::Unsupported("map encoder has no convolution stages".into()));
    }
    let mut t = Tape::new(store);
    let fwd = encoder.forward(&mut t, raster);
    let score = head(&mut t, fwd.features);
    if t.numel(score) != 1 {
        return Err(Error::invalid("saliency head must produce a scalar"));
    }
    let act = fwd.last_stage.expect("stages present");
    let (channels, npix) = t.shape(act);
    let grads = t.backward(score);
    let a = t.value(act);
    let mut cam = vec![0.0; npix];
    if let Some(g) = grads.get(act) {
        for c in 0..channels {
            let row = &g[c * npix..(c + 1) * npix];
            let alpha = row.iter().sum::<f64>() / npix as f64;
            for (p, v) in cam.iter_mut().enumerate() {
                *v += alpha * a[c * npix + p];
            }
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let (gh, gw) = fwd.last_grid;
    let mut values = upsample_bilinear(&cam, gh, gw, RASTER_SIZE, RASTER_SIZE);
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(SaliencyMap {
        values,
        coarse: cam,
        coarse_grid: (gh, gw),
    })
}

/// Bilinear resize with aligned cell centres and edge clamping.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        let (r0, r1, fr) = coord(r, out_h, h);
        for c in 0..out_w {
            let (c0, c1, fc) = coord(c, out_w, w);
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out[r * out_w + c] = top * (1.0 - fr) + bottom * fr;
        }
    }
    out
}
