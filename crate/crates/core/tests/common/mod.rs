//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use contextvae::data::{generate_scenarios, make_windows, FutureTruth, ObservationWindow, SyntheticConfig, WindowSpec};
use contextvae::map::{MapEncoderConfig, MapPooling};
use contextvae::model::{ContextVae, EncoderMode, ModelConfig};
use contextvae::nn::{Gradients, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// D = Z = 4 with a two-stage map encoder; every module is active.
pub fn mini_config() -> ModelConfig {
    ModelConfig {
        hidden: 4,
        latent: 4,
        embed: 4,
        map_encoder: MapEncoderConfig {
            stem_pool: 8,
            channels: vec![2, 2],
            kernel: 3,
            stride: 2,
            coord_channels: true,
            pooling: MapPooling::GlobalAverage,
            features: 4,
        },
        mode: EncoderMode::FULL,
        scaled_attention: false,
        z_samples: 1,
        seed: 3,
    }
}

/// A T = 2, H = 2 synthetic window with neighbors on every frame.
pub fn mini_window() -> (ObservationWindow, FutureTruth) {
    let scenes = generate_scenarios(&SyntheticConfig::default(), 4).unwrap();
    scenes
        .iter()
        .flat_map(|(s, _)| make_windows(s, &s.objects_of_interest, &WindowSpec::fixed(2, 2, 60.0)).unwrap())
        .find(|(w, f)| w.neighbors.iter().chain(&f.neighbors).all(|n| n.len() >= 2))
        .expect("a window with neighbors")
}

pub fn fixed_noise(horizon: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon)
        .map(|_| (0..width).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// Adds seeded uniform noise of half-width `scale` to every parameter.
/// Zero-initialized biases over blank raster regions put whole conv maps
/// exactly on the ReLU kink, where central differences average the two
/// one-sided slopes; the jitter moves the check to a generic point.
pub fn jitter(model: &mut ContextVae, scale: f64, seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.store.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    }
}

/// Per-tensor `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖)` of the ELBO loss
/// against central differences with step `h`.
pub fn gradient_check(model: &mut ContextVae, window: &ObservationWindow, future: &FutureTruth, h: f64) -> Vec<(String, f64)> {
    let noise = fixed_noise(future.horizon(), model.config.z_samples * model.config.latent, 17);
    let loss = |m: &ContextVae| {
        let mut t = Tape::new(&m.store);
        let out = m.elbo_with_noise(&mut t, window, future, 1.0, &noise).unwrap();
        t.value(out.loss)[0]
    };
    let mut analytic = Gradients::zeros_like(&model.store);
    {
        let mut t = Tape::new(&model.store);
        let out = model.elbo_with_noise(&mut t, window, future, 1.0, &noise).unwrap();
        let g = t.backward(out.loss);
        t.accumulate(&g, &mut analytic);
    }
    let ids: Vec<_> = model.store.ids().collect();
    let mut out = Vec::new();
    for id in ids {
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for k in 0..model.store.get(id).len() {
            let orig = model.store.get(id)[k];
            model.store.get_mut(id)[k] = orig + h;
            let up = loss(model);
            model.store.get_mut(id)[k] = orig - h;
            let down = loss(model);
            model.store.get_mut(id)[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic.get(id)[k];
            diff += (fd - an) * (fd - an);
            na += an * an;
            nf += fd * fd;
        }
        let scale = na.sqrt().max(nf.sqrt());
        let rel = if scale > 0.0 { diff.sqrt() / scale } else { 0.0 };
        out.push((model.store.tensor(id).name.clone(), rel));
    }
    out
}
