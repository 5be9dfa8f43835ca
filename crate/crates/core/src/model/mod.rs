//! The ContextVAE model: observation encoder with map and social attention
//! feeding a timewise variational autoencoder.

pub mod encoder;
pub mod vae;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FutureTruth, ObservationWindow};
use crate::geometry::reconstruct_trajectory;
use crate::error::{Error, Result};
use crate::map::{grad_cam, MapEncoder, MapEncoderConfig, SaliencyMap};
use crate::nn::{ParamStore, Tape, Var};

pub use encoder::{AttentionRecord, EncoderOutput, ObservationEncoder};
pub use vae::{
    kl_diagonal_gaussian, DiagonalGaussian, ElboOutput, GaussianVar, PredictionSet, TimewiseVae, LOG_STD_MAX,
    LOG_STD_MIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    None,
    Indie,
    Integrated,
}

/// Ablation switches of the observation encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderMode {
    pub use_s_attn: bool,
    pub map_mode: MapMode,
    pub use_m_attn: bool,
}

impl Default for EncoderMode {
    fn default() -> Self {
        EncoderMode::FULL
    }
}

impl EncoderMode {
    pub const NO_MAP: EncoderMode = EncoderMode {
        use_s_attn: true,
        map_mode: MapMode::None,
        use_m_attn: false,
    };
    pub const INDIE: EncoderMode = EncoderMode {
        use_s_attn: true,
        map_mode: MapMode::Indie,
        use_m_attn: false,
    };
    pub const INTEGRATED: EncoderMode = EncoderMode {
        use_s_attn: true,
        map_mode: MapMode::Integrated,
        use_m_attn: false,
    };
    pub const FULL: EncoderMode = EncoderMode {
        use_s_attn: true,
        map_mode: MapMode::Integrated,
        use_m_attn: true,
    };

    pub fn validate(&self) -> Result<()> {
        if self.use_m_attn && self.map_mode != MapMode::Integrated {
            return Err(Error::config("M-ATTN requires the integrated map mode"));
        }
        Ok(())
    }

    pub fn uses_map(&self) -> bool {
        self.map_mode != MapMode::None
    }

    /// Short tag used in reports: `no-map`, `indie`, `integrated`,
    /// `integrated+m-attn`, with `-no-s-attn` appended when S-ATTN is off.
    pub fn tag(&self) -> String {
        let base = match (self.map_mode, self.use_m_attn) {
            (MapMode::None, _) => "no-map",
            (MapMode::Indie, _) => "indie",
            (MapMode::Integrated, false) => "integrated",
            (MapMode::Integrated, true) => "integrated+m-attn",
        };
        if self.use_s_attn {
            base.to_string()
        } else {
            format!("{base}-no-s-attn")
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        let (base, s_attn) = match tag.strip_suffix("-no-s-attn") {
            Some(b) => (b, false),
            None => (tag, true),
        };
        let mut mode = match base {
            "no-map" | "none" => Self::NO_MAP,
            "indie" => Self::INDIE,
            "integrated" => Self::INTEGRATED,
            "integrated+m-attn" | "full" => Self::FULL,
            other => return Err(Error::config(format!("unknown encoder mode `{other}`"))),
        };
        mode.use_s_attn = s_attn;
        Ok(mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width D of every recurrent state.
    pub hidden: usize,
    /// Latent width Z.
    pub latent: usize,
    /// Width of attention and embedding spaces.
    pub embed: usize,
    pub map_encoder: MapEncoderConfig,
    pub mode: EncoderMode,
    /// Divide attention scores by √embed.
    pub scaled_attention: bool,
    /// Latent samples per step in the training objective.
    pub z_samples: usize,
    /// Seed of the parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 256,
            latent: 32,
            embed: 64,
            map_encoder: MapEncoderConfig::default(),
            mode: EncoderMode::FULL,
            scaled_attention: false,
            z_samples: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        if self.hidden == 0 || self.latent == 0 || self.embed == 0 || self.z_samples == 0 {
            return Err(Error::config("model widths and z_samples must be positive"));
        }
        if self.mode.uses_map() {
            self.map_encoder.validate()?;
        }
        Ok(())
    }

    pub fn map_features(&self) -> usize {
        self.map_encoder.features
    }
}

/// All learnable weights plus the module layout that indexes them.
pub struct ContextVae {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub map: Option<MapEncoder>,
    pub encoder: ObservationEncoder,
    pub vae: TimewiseVae,
    map_passes: AtomicUsize,
}

impl Clone for ContextVae {
    fn clone(&self) -> Self {
        ContextVae {
            config: self.config.clone(),
            store: self.store.clone(),
            map: self.map.clone(),
            encoder: self.encoder.clone(),
            vae: self.vae.clone(),
            map_passes: AtomicUsize::new(self.map_passes()),
        }
    }
}

impl std::fmt::Debug for ContextVae {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContextVae")
            .field("mode", &self.config.mode.tag())
            .field("parameters", &self.store.num_scalars())
            .finish()
    }
}

impl ContextVae {
    /// Freshly initialized model; initialization depends only on the config.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let map = if config.mode.uses_map() {
            Some(MapEncoder::new(&mut store, config.map_encoder.clone(), &mut rng)?)
        } else {
            None
        };
        let encoder = ObservationEncoder::new(&mut store, &config, &mut rng);
        let vae = TimewiseVae::new(&mut store, &config, &mut rng);
        Ok(ContextVae {
            config,
            store,
            map,
            encoder,
            vae,
            map_passes: AtomicUsize::new(0),
        })
    }

    /// Number of map-encoder evaluations since construction.
    pub fn map_passes(&self) -> usize {
        self.map_passes.load(Ordering::Relaxed)
    }

    /// Map features M of a window (`1 × F`), or `None` without a map.
    pub fn extract_map_features(&self, t: &mut Tape, window: &ObservationWindow) -> Option<Var> {
        let map = self.map.as_ref()?;
        self.map_passes.fetch_add(1, Ordering::Relaxed);
        Some(map.forward(t, &window.raster).features)
    }

    /// Decoder initial state h^T for a window.
    pub fn encode(&self, t: &mut Tape, window: &ObservationWindow) -> Result<EncoderOutput> {
        let m = self.extract_map_features(t, window);
        self.encoder.encode_observation(t, window, m, &self.config)
    }

    /// Negative ELBO of one (window, future) pair with noise drawn from `rng`.
    pub fn elbo(
        &self,
        t: &mut Tape,
        window: &ObservationWindow,
        future: &FutureTruth,
        beta: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<ElboOutput> {
        let enc = self.encode(t, window)?;
        self.vae
            .elbo(t, &self.encoder, enc.hidden, future, &self.config, beta, rng)
    }

    /// As [`ContextVae::elbo`] with explicit per-step standard normal noise.
    pub fn elbo_with_noise(
        &self,
        t: &mut Tape,
        window: &ObservationWindow,
        future: &FutureTruth,
        beta: f64,
        noise: &[Vec<f64>],
    ) -> Result<ElboOutput> {
        let enc = self.encode(t, window)?;
        self.vae
            .elbo_with_noise(t, &self.encoder, enc.hidden, future, &self.config, beta, noise)
    }

    /// Draws `k` futures of `horizon` steps from the prior chain. The result
    /// depends only on the window, the parameters, `k`, `horizon` and `seed`.
    pub fn sample_predictions(
        &self,
        window: &ObservationWindow,
        k: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<PredictionSet> {
        if k == 0 || horizon == 0 {
            return Err(Error::invalid("k and horizon must be at least 1"));
        }
        let mut t = Tape::new(&self.store);
        let enc = self.encode(&mut t, window)?;
        let h0 = t.value(enc.hidden).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (displacements, step_distributions) = self.vae.rollout(&mut t, &h0, k, horizon, &mut rng);
        let last = window.last_position();
        let trajectories: Vec<_> = displacements
            .iter()
            .map(|d| {
                reconstruct_trajectory(last, d)
                    .into_iter()
                    .map(|p| window.frame.to_world(p))
                    .collect::<Vec<_>>()
            })
            .collect();
        if trajectories.iter().flatten().any(|p| !p.is_finite()) {
            return Err(Error::Numerical {
                message: "non-finite predicted position".into(),
                dump: None,
            });
        }
        Ok(PredictionSet {
            scene_id: window.scene_id.clone(),
            target_id: window.target_id,
            seed,
            trajectories,
            step_distributions,
            attention: enc.attention,
        })
    }

    /// GradCAM of the window's negative ELBO (latents at the posterior
    /// mean) over the map encoder's last convolution stage.
    pub fn map_saliency(&self, window: &ObservationWindow, future: &FutureTruth) -> Result<SaliencyMap> {
        let map = self
            .map
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("mode {} has no map encoder", self.config.mode.tag())))?;
        let noise = vec![vec![0.0; self.config.z_samples * self.config.latent]; future.horizon()];
        let mut failure = None;
        let sal = grad_cam(&self.store, map, &window.raster, |t, m| {
            let out = self
                .encoder
                .encode_observation(t, window, Some(m), &self.config)
                .and_then(|enc| {
                    self.vae
                        .elbo_with_noise(t, &self.encoder, enc.hidden, future, &self.config, 1.0, &noise)
                });
            match out {
                Ok(o) => o.loss,
                Err(e) => {
                    failure = Some(e);
                    t.constant(vec![0.0], 1, 1)
                }
            }
        })?;
        match failure {
            Some(e) => Err(e),
            None => Ok(sal),
        }
    }
}
