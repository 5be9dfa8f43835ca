//! Convolutional map-feature extractor.
//!
//! The raster is block-averaged by a fixed stem, optionally extended with two
//! coordinate channels, then passed through strided convolution stages with
//! ReLU, pooled, and projected to the feature width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::{RasterMap, RASTER_CHANNELS, RASTER_SIZE};
use crate::error::{Error, Result};
use crate::nn::{Conv2dSpec, Init, Linear, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapPooling {
    GlobalAverage,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapEncoderConfig {
    /// Block size of the fixed averaging stem (must divide 224).
    pub stem_pool: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    /// Append normalized x/y coordinate planes to the stem output.
    pub coord_channels: bool,
    pub pooling: MapPooling,
    /// Output feature width F.
    pub features: usize,
}

impl Default for MapEncoderConfig {
    fn default() -> Self {
        MapEncoderConfig {
            stem_pool: 4,
            channels: vec![16, 32, 64, 128],
            kernel: 3,
            stride: 2,
            coord_channels: true,
            pooling: MapPooling::GlobalAverage,
            features: 256,
        }
    }
}

impl MapEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_pool == 0 || RASTER_SIZE % self.stem_pool != 0 {
            return Err(Error::config(format!(
                "stem_pool {} must divide {RASTER_SIZE}",
                self.stem_pool
            )));
        }
        if self.kernel == 0 || self.stride == 0 || self.features == 0 {
            return Err(Error::config("map encoder kernel, stride and features must be positive"));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("map encoder channel widths must be positive"));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        RASTER_CHANNELS + if self.coord_channels { 2 } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ConvStage {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: Conv2dSpec,
}

#[derive(Debug, Clone)]
pub struct MapEncoder {
    pub config: MapEncoderConfig,
    pub stages: Vec<ConvStage>,
    pub projection: Linear,
}

/// Tape handles produced by one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct MapForward {
    pub features: Var,
    /// Post-activation output of the last convolution stage, if any.
    pub last_stage: Option<Var>,
    pub last_grid: (usize, usize),
}

impl MapEncoder {
    pub fn new(store: &mut ParamStore, config: MapEncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let side = RASTER_SIZE / config.stem_pool;
        let (mut h, mut w) = (side, side);
        let mut in_c = config.input_channels();
        let mut stages = Vec::new();
        for (i, &out_c) in config.channels.iter().enumerate() {
            let spec = Conv2dSpec {
                in_channels: in_c,
                out_channels: out_c,
                kernel: config.kernel,
                stride: config.stride,
                pad: config.kernel / 2,
                in_h: h,
                in_w: w,
            };
            if h + 2 * spec.pad < spec.kernel || w + 2 * spec.pad < spec.kernel {
                return Err(Error::config(format!("map encoder stage {i} has an empty output")));
            }
            let fan_in = in_c * config.kernel * config.kernel;
            let wid = store.add(format!("map.conv{i}.w"), &[out_c, fan_in], Init::He { fan_in }, rng);
            let bid = store.add(format!("map.conv{i}.b"), &[out_c], Init::Zeros, rng);
            stages.push(ConvStage { w: wid, b: bid, spec });
            h = spec.out_h();
            w = spec.out_w();
            in_c = out_c;
        }
        let pooled = match config.pooling {
            MapPooling::GlobalAverage => in_c,
            MapPooling::Flatten => in_c * h * w,
        };
        let projection = Linear::new(store, "map.proj", pooled, config.features, rng);
        Ok(MapEncoder {
            config,
            stages,
            projection,
        })
    }

    pub fn features(&self) -> usize {
        self.config.features
    }

    /// Stem output `[C][side][side]`: block-averaged raster plus optional
    /// coordinate planes in [−1, 1].
    pub fn stem(&self, raster: &RasterMap) -> Vec<f64> {
        let mut x = raster.pooled(self.config.stem_pool);
        if self.config.coord_channels {
            let side = RASTER_SIZE / self.config.stem_pool;
            let coord = |i: usize| 2.0 * (i as f64 + 0.5) / side as f64 - 1.0;
            x.reserve(2 * side * side);
            for _row in 0..side {
                for col in 0..side {
                    x.push(coord(col));
                }
            }
            for row in 0..side {
                for _col in 0..side {
                    x.push(-coord(row));
                }
            }
        }
        x
    }

    pub fn forward(&self, t: &mut Tape, raster: &RasterMap) -> MapForward {
        let side = RASTER_SIZE / self.config.stem_pool;
        let input = self.stem(raster);
        let mut x = t.constant(input, self.config.input_channels(), side * side);
        let mut last_stage = None;
        let mut grid = (side, side);
        for stage in &self.stages {
            let w = t.param(stage.w);
            let b = t.param(stage.b);
            let y = t.conv2d(x, w, b, stage.spec);
            x = t.relu(y);
            last_stage = Some(x);
            grid = (stage.spec.out_h(), stage.spec.out_w());
        }
        let pooled = match self.config.pooling {
            MapPooling::GlobalAverage => t.global_avg_pool(x),
            MapPooling::Flatten => {
                let n = t.numel(x);
                t.reshape(x, 1, n)
            }
        };
        let features = self.projection.forward(t, pooled);
        MapForward {
            features,
            last_stage,
            last_grid: grid,
        }
    }
}
