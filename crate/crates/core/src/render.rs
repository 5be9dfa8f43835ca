//! Static PNG output: raster previews and prediction figures.
//!
//! Raster channels map to colors one to one: road dividers to red, lane
//! dividers to green, drivable area and crosswalks to blue. Figures draw
//! the observed track in blue, the true future in red and sampled
//! futures in orange over a dimmed raster.

use std::io::Write;
use std::path::Path;

use crate::data::{FutureTruth, ObservationWindow};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::map::{local_to_pixel, RasterMap, SaliencyMap, ANCHOR_PIXEL, RASTER_CHANNELS, RASTER_SIZE};
use crate::model::PredictionSet;

pub type Rgb = [u8; 3];

pub const OBSERVED: Rgb = [40, 90, 255];
pub const TRUTH: Rgb = [230, 30, 30];
pub const PREDICTION: Rgb = [255, 150, 0];
pub const ANCHOR: Rgb = [255, 255, 255];
pub const SOCIAL_ATTENTION: Rgb = [60, 220, 60];
pub const MAP_ATTENTION: Rgb = [220, 60, 220];
pub const SALIENCY: Rgb = [255, 255, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB bytes.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.data[i..i + 3].copy_from_slice(&c);
        }
    }

    /// Mixes `c` into pixel (x, y) with weight `alpha`.
    pub fn blend(&mut self, x: usize, y: usize, c: Rgb, alpha: f64) {
        if x < self.width && y < self.height {
            let old = self.get(x, y);
            let mut out = [0u8; 3];
            for k in 0..3 {
                out[k] = (old[k] as f64 * (1.0 - alpha) + c[k] as f64 * alpha).round() as u8;
            }
            self.set(x, y, out);
        }
    }

    fn plot(&mut self, x: f64, y: f64, c: Rgb) {
        if x >= 0.0 && y >= 0.0 {
            self.set(x as usize, y as usize, c);
        }
    }

    /// Line in continuous image coordinates.
    pub fn draw_line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb) {
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            self.plot(a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t, c);
        }
    }

    pub fn draw_disk(&mut self, center: (f64, f64), radius: f64, c: Rgb) {
        let r = radius.ceil() as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                if ((dx * dx + dy * dy) as f64) <= radius * radius {
                    self.plot(center.0 + dx as f64, center.1 + dy as f64, c);
                }
            }
        }
    }
}

/// Writes an RGB PNG with optional `tEXt` chunks.
pub fn encode_png(out: impl Write, image: &Image, text: &[(&str, String)]) -> Result<()> {
    let png_err = |e: png::EncodingError| Error::Io(std::io::Error::other(e.to_string()));
    let mut enc = png::Encoder::new(out, image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        enc.add_text_chunk(k.to_string(), v.clone()).map_err(png_err)?;
    }
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&image.data).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

pub fn write_png(path: &Path, image: &Image, text: &[(&str, String)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    encode_png(std::io::BufWriter::new(file), image, text)
}

/// Raster as an image: channel c sets color component c to 255.
pub fn raster_image(raster: &RasterMap, mark_anchor: bool) -> Image {
    let mut img = Image::new(RASTER_SIZE, RASTER_SIZE);
    for row in 0..RASTER_SIZE {
        for col in 0..RASTER_SIZE {
            let mut c = [0u8; 3];
            for (ch, v) in c.iter_mut().enumerate().take(RASTER_CHANNELS) {
                if raster.get(ch, row, col) {
                    *v = 255;
                }
            }
            img.set(col, row, c);
        }
    }
    if mark_anchor {
        img.set(ANCHOR_PIXEL.1, ANCHOR_PIXEL.0, ANCHOR);
    }
    img
}

/// Optional layers of a prediction figure.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overlays<'a> {
    pub attention: bool,
    pub saliency: Option<&'a SaliencyMap>,
}

/// Prediction figure in the window's local frame, `scale` output pixels per
/// raster pixel.
pub fn prediction_figure(
    window: &ObservationWindow,
    future: Option<&FutureTruth>,
    predictions: &PredictionSet,
    overlays: Overlays<'_>,
    scale: usize,
) -> Image {
    let scale = scale.max(1);
    let size = RASTER_SIZE * scale;
    let mut img = Image::new(size, size);
    let s = scale as f64;
    for row in 0..RASTER_SIZE {
        for col in 0..RASTER_SIZE {
            let mut c = [0u8; 3];
            for (ch, v) in c.iter_mut().enumerate().take(RASTER_CHANNELS) {
                if window.raster.get(ch, row, col) {
                    *v = 90;
                }
            }
            for dy in 0..scale {
                for dx in 0..scale {
                    img.set(col * scale + dx, row * scale + dy, c);
                }
            }
        }
    }
    if let Some(sal) = overlays.saliency {
        for y in 0..size {
            for x in 0..size {
                let v = sal.at(y / scale, x / scale);
                img.blend(x, y, SALIENCY, 0.6 * v);
            }
        }
    }
    let to_img = |p: Vec2| {
        let (col, row) = local_to_pixel(p);
        ((col + 0.5) * s, (row + 0.5) * s)
    };
    let polyline = |img: &mut Image, pts: &[Vec2], c: Rgb| {
        for w in pts.windows(2) {
            img.draw_line(to_img(w[0]), to_img(w[1]), c);
        }
        for &p in pts {
            img.draw_disk(to_img(p), 0.35 * s, c);
        }
    };
    let last = window.last_position();
    for traj in &predictions.trajectories {
        let mut pts = vec![last];
        pts.extend(traj.iter().map(|&p| window.frame.to_local(p)));
        polyline(&mut img, &pts, PREDICTION);
    }
    if let Some(f) = future {
        let mut pts = vec![last];
        pts.extend_from_slice(&f.positions);
        polyline(&mut img, &pts, TRUTH);
    }
    polyline(&mut img, &window.positions, OBSERVED);
    if overlays.attention {
        let att = &predictions.attention;
        let frames: [(usize, Option<&Vec<(u64, f64)>>, Rgb); 2] = [
            (0, att.map_attention.as_ref(), MAP_ATTENTION),
            (window.len() - 1, att.social_attention.last(), SOCIAL_ATTENTION),
        ];
        for (t, weights, color) in frames {
            let Some(weights) = weights else { continue };
            for (id, w) in weights {
                if let Some(n) = window.neighbors[t].iter().find(|n| n.agent_id == *id) {
                    let p = window.positions[t] + n.rel_position;
                    img.draw_disk(to_img(p), (0.5 + 2.5 * w) * s, color);
                }
            }
        }
    }
    img
}
