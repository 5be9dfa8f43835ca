//! Timewise VAE: conditional prior, backward posterior, displacement decoder
//! and the per-step evidence lower bound.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::encoder::{AttentionRecord, ObservationEncoder};
use super::ModelConfig;
use crate::data::FutureTruth;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::nn::{Activation, Embedding, GruCell, Mlp, ParamStore, Tape, Var};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 5.0;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian given by mean and log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagonalGaussian {
    /// Builds a Gaussian, clamping `log_std` into the supported range.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::invalid("mean and log_std lengths differ"));
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::invalid("Gaussian parameters must be finite"));
        }
        let log_std = log_std.into_iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok(DiagonalGaussian { mean, log_std })
    }

    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((m, l), x)| {
                let z = (x - m) * (-l).exp();
                -l - HALF_LOG_TWO_PI - 0.5 * z * z
            })
            .sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| m + l.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Closed-form KL(q ‖ p) between diagonal Gaussians.
pub fn kl_diagonal_gaussian(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::invalid(format!(
            "KL dimension mismatch: {} vs {}",
            q.dim(),
            p.dim()
        )));
    }
    Ok((0..q.dim())
        .map(|i| {
            let (lq, lp) = (q.log_std[i], p.log_std[i]);
            let diff = q.mean[i] - p.mean[i];
            lp - lq + ((2.0 * (lq - lp)).exp() + diff * diff * (-2.0 * lp).exp()) / 2.0 - 0.5
        })
        .sum())
}

/// Gaussian head output on the tape; `rows × n` mean and log-std.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVar {
    pub mean: Var,
    pub log_std: Var,
}

impl GaussianVar {
    fn from_head(t: &mut Tape, out: Var, n: usize) -> Self {
        let mean = t.slice_cols(out, 0, n);
        let raw = t.slice_cols(out, n, n);
        let log_std = t.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        GaussianVar { mean, log_std }
    }

    /// Value of row `r`.
    pub fn row(&self, t: &Tape, r: usize) -> DiagonalGaussian {
        let n = t.shape(self.mean).1;
        DiagonalGaussian {
            mean: t.value(self.mean)[r * n..(r + 1) * n].to_vec(),
            log_std: t.value(self.log_std)[r * n..(r + 1) * n].to_vec(),
        }
    }

    /// `μ + σ ⊙ ε` with `eps` of the same shape.
    pub fn reparameterize(&self, t: &mut Tape, eps: Var) -> Var {
        let std = t.exp(self.log_std);
        let noise = t.mul(std, eps);
        t.add(self.mean, noise)
    }

    /// Summed log-density of constant targets `x`.
    pub fn log_density(&self, t: &mut Tape, x: Var) -> Var {
        let n = t.numel(self.mean) as f64;
        let diff = t.sub(x, self.mean);
        let neg = t.affine(self.log_std, -1.0, 0.0);
        let inv = t.exp(neg);
        let z = t.mul(diff, inv);
        let z2 = t.mul(z, z);
        let quad = t.sum(z2);
        let logs = t.sum(self.log_std);
        // 2·Σ log σ so that the halving below yields Σ log σ
        let two = t.affine(logs, 2.0, 0.0);
        let total = t.add(quad, two);
        t.affine(total, -0.5, -n * HALF_LOG_TWO_PI)
    }

    /// Summed KL(self ‖ p).
    pub fn kl(&self, t: &mut Tape, p: &GaussianVar) -> Var {
        let n = t.numel(self.mean) as f64;
        let dl = t.sub(self.log_std, p.log_std);
        let var_ratio = {
            let two = t.affine(dl, 2.0, 0.0);
            t.exp(two)
        };
        let diff = t.sub(self.mean, p.mean);
        let neg = t.affine(p.log_std, -1.0, 0.0);
        let inv = t.exp(neg);
        let z = t.mul(diff, inv);
        let z2 = t.mul(z, z);
        let inner = t.add(var_ratio, z2);
        let half = t.affine(inner, 0.5, 0.0);
        let term = t.sub(half, dl);
        let s = t.sum(term);
        t.affine(s, 1.0, -0.5 * n)
    }
}

/// Loss and diagnostics of one ELBO evaluation.
#[derive(Debug, Clone)]
pub struct ElboOutput {
    pub loss: Var,
    /// Mean negative log-likelihood per step.
    pub reconstruction: f64,
    /// Mean KL per step.
    pub kl: f64,
}

/// Sampled futures of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub scene_id: String,
    pub target_id: u64,
    pub seed: u64,
    /// `k × H` world-frame positions.
    pub trajectories: Vec<Vec<Vec2>>,
    /// `k × H` output distributions over the local-frame displacement.
    pub step_distributions: Vec<Vec<DiagonalGaussian>>,
    pub attention: AttentionRecord,
}

impl PredictionSet {
    pub fn k(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct TimewiseVae {
    pub psi_zd: Embedding,
    pub forward_gru: GruCell,
    pub backward_gru: GruCell,
    pub prior_head: Mlp,
    pub posterior_head: Mlp,
    pub decoder_head: Mlp,
    pub latent: usize,
    pub hidden: usize,
}

impl TimewiseVae {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, z, e) = (config.hidden, config.latent, config.embed);
        TimewiseVae {
            psi_zd: Embedding::new(store, "vae.psi_zd", z + 2, e, Activation::Relu, rng),
            forward_gru: GruCell::new(store, "vae.forward", e, d, rng),
            backward_gru: GruCell::new(store, "vae.backward", 4 + e, d, rng),
            prior_head: Mlp::new(store, "vae.prior", d, d, 2 * z, rng),
            posterior_head: Mlp::new(store, "vae.posterior", 2 * d, d, 2 * z, rng),
            decoder_head: Mlp::new(store, "vae.decoder", z + d, d, 4, rng),
            latent: z,
            hidden: d,
        }
    }

    /// p_θ(z | h).
    pub fn prior(&self, t: &mut Tape, h: Var) -> GaussianVar {
        let out = self.prior_head.forward(t, h);
        GaussianVar::from_head(t, out, self.latent)
    }

    /// q_φ(z | b, h).
    pub fn posterior(&self, t: &mut Tape, b: Var, h: Var) -> GaussianVar {
        let x = t.concat(&[b, h]);
        let out = self.posterior_head.forward(t, x);
        GaussianVar::from_head(t, out, self.latent)
    }

    /// p_ξ(d | z, h) over the next local-frame displacement.
    pub fn decode(&self, t: &mut Tape, z: Var, h: Var) -> GaussianVar {
        let x = t.concat(&[z, h]);
        let out = self.decoder_head.forward(t, x);
        GaussianVar::from_head(t, out, 2)
    }

    /// h' = g→(ψ_zd(z, d), h).
    pub fn decoder_step(&self, t: &mut Tape, h: Var, z: Var, d: Var) -> Var {
        let x = t.concat(&[z, d]);
        let e = self.psi_zd.forward(t, x);
        self.forward_gru.forward(t, e, h)
    }

    /// Backward states b^{T+1..T+H} (index 0 is b^{T+1}) from the future
    /// observations, starting at a zero state after the last frame. S-ATTN
    /// uses the running backward state as its query.
    pub fn backward_encode(
        &self,
        t: &mut Tape,
        encoder: &ObservationEncoder,
        future: &FutureTruth,
        config: &ModelConfig,
    ) -> Result<Vec<Var>> {
        let h = future.horizon();
        if h == 0 || future.self_states.len() != h || future.neighbors.len() != h {
            return Err(Error::invalid("backward encoding needs complete future frames"));
        }
        let mut b = t.zeros(1, self.hidden);
        let mut states = vec![b; h];
        for tau in (0..h).rev() {
            let (o, _) = encoder.observation(t, b, &future.self_states[tau], &future.neighbors[tau], config);
            b = self.backward_gru.forward(t, o, b);
            states[tau] = b;
        }
        Ok(states)
    }

    /// Negative timewise ELBO averaged over steps and latent samples, with
    /// teacher-forced displacements and caller-provided standard normal
    /// noise (`noise[τ]` holds `samples × Z` values).
    #[allow(clippy::too_many_arguments)]
    pub fn elbo_with_noise(
        &self,
        t: &mut Tape,
        encoder: &ObservationEncoder,
        h0: Var,
        future: &FutureTruth,
        config: &ModelConfig,
        beta: f64,
        noise: &[Vec<f64>],
    ) -> Result<ElboOutput> {
        let horizon = future.horizon();
        let samples = config.z_samples;
        if noise.len() != horizon || noise.iter().any(|n| n.len() != samples * self.latent) {
            return Err(Error::invalid(format!(
                "ELBO noise must be {horizon} × {samples}·{}",
                self.latent
            )));
        }
        let b = self.backward_encode(t, encoder, future, config)?;
        let mut h = t.repeat_rows(h0, samples);
        let mut terms = Vec::with_capacity(2 * horizon);
        let (mut recon, mut kl_total) = (0.0, 0.0);
        for tau in 0..horizon {
            let prior = self.prior(t, h);
            let bt = t.repeat_rows(b[tau], samples);
            let post = self.posterior(t, bt, h);
            let eps = t.constant(noise[tau].clone(), samples, self.latent);
            let z = post.reparameterize(t, eps);
            let dec = self.decode(t, z, h);
            let dv = future.displacements[tau];
            let d = t.constant([dv.x, dv.y].repeat(samples), samples, 2);
            let ll = dec.log_density(t, d);
            let kl = post.kl(t, &prior);
            recon -= t.value(ll)[0];
            kl_total += t.value(kl)[0];
            let nll = t.affine(ll, -1.0, 0.0);
            let weighted = t.affine(kl, beta, 0.0);
            terms.push(nll);
            terms.push(weighted);
            h = self.decoder_step(t, h, z, d);
        }
        let all = t.concat(&terms);
        let total = t.sum(all);
        let scale = 1.0 / (horizon * samples) as f64;
        let loss = t.affine(total, scale, 0.0);
        Ok(ElboOutput {
            loss,
            reconstruction: recon * scale,
            kl: kl_total * scale,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn elbo(
        &self,
        t: &mut Tape,
        encoder: &ObservationEncoder,
        h0: Var,
        future: &FutureTruth,
        config: &ModelConfig,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<ElboOutput> {
        let n = config.z_samples * self.latent;
        let noise: Vec<Vec<f64>> = (0..future.horizon())
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        self.elbo_with_noise(t, encoder, h0, future, config, beta, &noise)
    }

    /// Samples `k` displacement sequences of length `horizon` from the
    /// prior chain started at `h0`. Returns the sampled displacements and
    /// their output distributions, both `k × horizon`.
    pub fn rollout(
        &self,
        t: &mut Tape,
        h0: &[f64],
        k: usize,
        horizon: usize,
        rng: &mut impl Rng,
    ) -> (Vec<Vec<Vec2>>, Vec<Vec<DiagonalGaussian>>) {
        let mut h = t.constant(h0.repeat(k), k, self.hidden);
        let mut ds = vec![Vec::with_capacity(horizon); k];
        let mut dists = vec![Vec::with_capacity(horizon); k];
        for _ in 0..horizon {
            let prior = self.prior(t, h);
            let eps: Vec<f64> = (0..k * self.latent).map(|_| rng.sample(StandardNormal)).collect();
            let eps = t.constant(eps, k, self.latent);
            let z = prior.reparameterize(t, eps);
            let dec = self.decode(t, z, h);
            let mut d = Vec::with_capacity(2 * k);
            for r in 0..k {
                let g = dec.row(t, r);
                let s = g.sample(rng);
                ds[r].push(Vec2::new(s[0], s[1]));
                d.extend_from_slice(&s);
                dists[r].push(g);
            }
            let d = t.constant(d, k, 2);
            h = self.decoder_step(t, h, z, d);
        }
        (ds, dists)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_gaussian(rng: &mut impl Rng, n: usize) -> DiagonalGaussian {
        DiagonalGaussian::new(
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn kl_closed_forms() {
        let a = DiagonalGaussian::new(vec![1.0], vec![0.0]).unwrap();
        let b = DiagonalGaussian::standard(1);
        assert!((kl_diagonal_gaussian(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kl_diagonal_gaussian(&a, &a).unwrap(), 0.0);
        assert!(kl_diagonal_gaussian(&a, &DiagonalGaussian::standard(2)).is_err());
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = random_gaussian(&mut rng, 4);
            let p = random_gaussian(&mut rng, 4);
            assert!(kl_diagonal_gaussian(&q, &p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_gaussian(&mut rng, 3);
        let p = random_gaussian(&mut rng, 3);
        let n = 100_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let x = q.sample(&mut rng);
                q.log_density(&x) - p.log_density(&x)
            })
            .sum::<f64>()
            / n as f64;
        let exact = kl_diagonal_gaussian(&q, &p).unwrap();
        assert!((mc - exact).abs() <= 0.01 * exact.max(0.1), "mc {mc} vs {exact}");
    }

    #[test]
    fn log_density_at_mean_of_standard_2d() {
        let g = DiagonalGaussian::standard(2);
        assert!((g.log_density(&[0.0, 0.0]) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn marginal_density_integrates_to_one() {
        let g = DiagonalGaussian::new(vec![0.7], vec![-0.3]).unwrap();
        let sigma = (-0.3f64).exp();
        let (lo, hi) = (0.7 - 8.0 * sigma, 0.7 + 8.0 * sigma);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        // Simpson's rule
        let f = |x: f64| g.log_density(&[x]).exp();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn clamps_log_std() {
        let g = DiagonalGaussian::new(vec![0.0, 0.0], vec![-50.0, 50.0]).unwrap();
        assert_eq!(g.log_std, vec![LOG_STD_MIN, LOG_STD_MAX]);
    }

    #[test]
    fn tape_terms_match_value_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = ParamStore::new();
        let q = random_gaussian(&mut rng, 3);
        let p = random_gaussian(&mut rng, 3);
        let x = [0.3, -1.1, 2.0];
        let mut t = Tape::new(&store);
        let gq = GaussianVar {
            mean: t.vector(q.mean.clone()),
            log_std: t.vector(q.log_std.clone()),
        };
        let gp = GaussianVar {
            mean: t.vector(p.mean.clone()),
            log_std: t.vector(p.log_std.clone()),
        };
        let kl = gq.kl(&mut t, &gp);
        let xv = t.vector(x.to_vec());
        let ll = gq.log_density(&mut t, xv);
        assert!((t.value(kl)[0] - kl_diagonal_gaussian(&q, &p).unwrap()).abs() < 1e-12);
        assert!((t.value(ll)[0] - q.log_density(&x)).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_step_matches_scalar_oracle() {
        // q = N(μq, σq), p = N(μp, σp), z = μq + σq ε, decoder N(μd, σd)
        let (mq, lq, mp, lp, eps, md, ld, d, beta) = (0.4, -0.2, -0.1, 0.3, 0.7, 1.2, -0.5, 0.9, 0.6);
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let q = GaussianVar {
            mean: t.vector(vec![mq]),
            log_std: t.vector(vec![lq]),
        };
        let p = GaussianVar {
            mean: t.vector(vec![mp]),
            log_std: t.vector(vec![lp]),
        };
        let e = t.vector(vec![eps]);
        let z = q.reparameterize(&mut t, e);
        let dec = GaussianVar {
            mean: t.vector(vec![md]),
            log_std: t.vector(vec![ld]),
        };
        let dv = t.vector(vec![d]);
        let ll = dec.log_density(&mut t, dv);
        let kl = q.kl(&mut t, &p);
        let loss = -t.value(ll)[0] + beta * t.value(kl)[0];

        let sq: f64 = f64::exp(lq);
        let sp: f64 = f64::exp(lp);
        let sd: f64 = f64::exp(ld);
        let expect_z = mq + sq * eps;
        let nll = 0.5 * ((d - md) / sd).powi(2) + sd.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
        let kl_s = (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5;
        assert!((t.value(z)[0] - expect_z).abs() < 1e-15);
        assert!((loss - (nll + beta * kl_s)).abs() < 1e-12);
    }
}
