//! Best-of-k displacement metrics and dataset evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{constant_velocity_predict, kalman_predict, EkfConfig};
use crate::data::{AgentId, FutureTruth, ObservationWindow};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::model::ContextVae;
use crate::train::mix_seed;

fn check_shapes(predictions: &[Vec<Vec2>], truth: &[Vec2]) -> Result<()> {
    if truth.is_empty() || predictions.is_empty() {
        return Err(Error::invalid("metrics need at least one prediction and H ≥ 1"));
    }
    if let Some(p) = predictions.iter().find(|p| p.len() != truth.len()) {
        return Err(Error::invalid(format!(
            "prediction length {} does not match horizon {}",
            p.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn error(p: Vec2, t: Vec2) -> f64 {
    let (dx, dy) = (p.x - t.x, p.y - t.y);
    (dx * dx + dy * dy).sqrt()
}

/// Mean Euclidean error of one trajectory, summed in step order.
pub fn ade(prediction: &[Vec2], truth: &[Vec2]) -> f64 {
    prediction.iter().zip(truth).map(|(p, t)| error(*p, *t)).sum::<f64>() / truth.len() as f64
}

pub fn fde(prediction: &[Vec2], truth: &[Vec2]) -> f64 {
    error(prediction[prediction.len() - 1], truth[truth.len() - 1])
}

/// min over predictions of the mean-over-steps error.
pub fn min_ade(predictions: &[Vec<Vec2>], truth: &[Vec2]) -> Result<f64> {
    check_shapes(predictions, truth)?;
    Ok(predictions.iter().map(|p| ade(p, truth)).fold(f64::INFINITY, f64::min))
}

/// min over predictions of the final-step error.
pub fn min_fde(predictions: &[Vec<Vec2>], truth: &[Vec2]) -> Result<f64> {
    check_shapes(predictions, truth)?;
    Ok(predictions.iter().map(|p| fde(p, truth)).fold(f64::INFINITY, f64::min))
}

/// Anything that maps a window to world-frame future trajectories.
pub trait Predictor: Sync {
    fn tag(&self) -> String;

    /// Up to `k` trajectories of `horizon` world positions. Deterministic
    /// predictors may return a single trajectory.
    fn predict(&self, window: &ObservationWindow, horizon: usize, k: usize, seed: u64) -> Result<Vec<Vec<Vec2>>>;
}

fn observed_world(window: &ObservationWindow) -> Vec<Vec2> {
    window.positions.iter().map(|&p| window.frame.to_world(p)).collect()
}

pub struct ConstantVelocity;

impl Predictor for ConstantVelocity {
    fn tag(&self) -> String {
        "constant-velocity".into()
    }

    fn predict(&self, window: &ObservationWindow, horizon: usize, _k: usize, _seed: u64) -> Result<Vec<Vec<Vec2>>> {
        Ok(vec![constant_velocity_predict(&observed_world(window), horizon)?])
    }
}

pub struct Kalman(pub EkfConfig);

impl Predictor for Kalman {
    fn tag(&self) -> String {
        "kalman".into()
    }

    fn predict(&self, window: &ObservationWindow, horizon: usize, _k: usize, _seed: u64) -> Result<Vec<Vec<Vec2>>> {
        Ok(vec![kalman_predict(&observed_world(window), window.dt, horizon, &self.0)?])
    }
}

impl Predictor for ContextVae {
    fn tag(&self) -> String {
        self.config.mode.tag()
    }

    fn predict(&self, window: &ObservationWindow, horizon: usize, k: usize, seed: u64) -> Result<Vec<Vec<Vec2>>> {
        Ok(self.sample_predictions(window, k, horizon, seed)?.trajectories)
    }
}

/// Looks up the true future; scores zero by construction.
pub struct Oracle {
    truths: HashMap<(String, AgentId, usize), Vec<Vec2>>,
}

impl Oracle {
    pub fn new(dataset: &[(ObservationWindow, FutureTruth)]) -> Self {
        Oracle {
            truths: dataset
                .iter()
                .map(|(w, f)| ((w.scene_id.clone(), w.target_id, w.start), f.world_positions(&w.frame)))
                .collect(),
        }
    }
}

impl Predictor for Oracle {
    fn tag(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, window: &ObservationWindow, horizon: usize, _k: usize, _seed: u64) -> Result<Vec<Vec<Vec2>>> {
        let key = (window.scene_id.clone(), window.target_id, window.start);
        let truth = self
            .truths
            .get(&key)
            .ok_or_else(|| Error::NotFound(format!("no truth for {key:?}")))?;
        if truth.len() < horizon {
            return Err(Error::invalid("oracle truth shorter than the horizon"));
        }
        Ok(vec![truth[..horizon].to_vec()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub min_ade: f64,
    pub min_fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub scene_id: String,
    pub target_id: AgentId,
    pub start: usize,
    pub metrics: Vec<KMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    /// Arithmetic means of the per-sample values, one entry per k.
    pub aggregate: Vec<KMetrics>,
    pub per_sample: Vec<SampleMetrics>,
}

impl EvaluationReport {
    pub fn metric(&self, k: usize) -> Option<KMetrics> {
        self.aggregate.iter().copied().find(|m| m.k == k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat `key<TAB>value` table of the aggregate rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model\t{}", self.model);
        let _ = writeln!(s, "horizon\t{}", self.horizon);
        let _ = writeln!(s, "samples\t{}", self.samples);
        let _ = writeln!(s, "seed\t{}", self.seed);
        for m in &self.aggregate {
            let _ = writeln!(s, "minADE_{}\t{:.6}", m.k, m.min_ade);
            let _ = writeln!(s, "minFDE_{}\t{:.6}", m.k, m.min_fde);
        }
        s
    }
}

/// Scores `predictor` on `dataset` at `horizon` for each k in `k_list`.
/// One set of max(k) samples is drawn per window, and each k uses its
/// first k members, so the metrics are nested in k.
pub fn evaluate(
    predictor: &dyn Predictor,
    dataset: &[(ObservationWindow, FutureTruth)],
    k_list: &[usize],
    horizon: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::invalid("k list must be nonempty with k ≥ 1"));
    }
    let k_max = *k_list.iter().max().expect("nonempty");
    let per_sample: Vec<SampleMetrics> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, (w, f))| {
            if f.horizon() < horizon {
                return Err(Error::invalid(format!(
                    "future has {} steps, evaluation needs {horizon}",
                    f.horizon()
                )));
            }
            let truth = f.truncated(horizon).world_positions(&w.frame);
            let preds = predictor.predict(w, horizon, k_max, mix_seed(seed, i as u64, 0xE7A1))?;
            let metrics = k_list
                .iter()
                .map(|&k| {
                    let subset = &preds[..k.min(preds.len())];
                    Ok(KMetrics {
                        k,
                        min_ade: min_ade(subset, &truth)?,
                        min_fde: min_fde(subset, &truth)?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(SampleMetrics {
                scene_id: w.scene_id.clone(),
                target_id: w.target_id,
                start: w.start,
                metrics,
            })
        })
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    let aggregate = k_list
        .iter()
        .enumerate()
        .map(|(j, &k)| KMetrics {
            k,
            min_ade: per_sample.iter().map(|s| s.metrics[j].min_ade).sum::<f64>() / n,
            min_fde: per_sample.iter().map(|s| s.metrics[j].min_fde).sum::<f64>() / n,
        })
        .collect();
    Ok(EvaluationReport {
        model: predictor.tag(),
        horizon,
        samples: per_sample.len(),
        seed,
        aggregate,
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{fixture_windows, tiny_config};
    use crate::model::EncoderMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize, offset: Vec2) -> Vec<Vec2> {
        (0..n).map(|i| Vec2::new(i as f64, 0.0) + offset).collect()
    }

    #[test]
    fn metric_examples() {
        let truth = line(4, Vec2::ZERO);
        assert_eq!(min_ade(&[truth.clone()], &truth).unwrap(), 0.0);
        assert_eq!(min_ade(&[line(4, Vec2::new(1.0, 0.0))], &truth).unwrap(), 1.0);
        let mut interior = line(4, Vec2::new(0.0, 5.0));
        *interior.last_mut().unwrap() = truth[3];
        assert_eq!(min_fde(&[interior], &truth).unwrap(), 0.0);
        assert_eq!(min_fde(&[line(4, Vec2::new(3.0, 4.0))], &truth).unwrap(), 5.0);
        assert!(min_ade(&[line(3, Vec2::ZERO)], &truth).is_err());
        assert!(min_fde(&[], &truth).is_err());
    }

    fn random_set(rng: &mut impl Rng, k: usize, h: usize) -> (Vec<Vec<Vec2>>, Vec<Vec2>) {
        let mut pt = || Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let truth: Vec<Vec2> = (0..h).map(|_| pt()).collect();
        let preds = (0..k).map(|_| (0..h).map(|_| pt()).collect()).collect();
        (preds, truth)
    }

    #[test]
    fn double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let (preds, truth) = random_set(&mut rng, 3, 12);
            let mut best_ade = f64::INFINITY;
            let mut best_fde = f64::INFINITY;
            for p in &preds {
                let mut sum = 0.0;
                for t in 0..truth.len() {
                    let (dx, dy) = (p[t].x - truth[t].x, p[t].y - truth[t].y);
                    sum += (dx * dx + dy * dy).sqrt();
                }
                best_ade = best_ade.min(sum / truth.len() as f64);
                let (dx, dy) = (p[11].x - truth[11].x, p[11].y - truth[11].y);
                best_fde = best_fde.min((dx * dx + dy * dy).sqrt());
            }
            assert_eq!(min_ade(&preds, &truth).unwrap(), best_ade);
            assert_eq!(min_fde(&preds, &truth).unwrap(), best_fde);
        }
    }

    proptest! {
        #[test]
        fn nested_sets_never_score_worse(seed in 0u64..1000, k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (preds, truth) = random_set(&mut rng, 20, 6);
            prop_assert!(min_ade(&preds[..k + 1], &truth).unwrap() <= min_ade(&preds[..k], &truth).unwrap());
            prop_assert!(min_fde(&preds[..k + 1], &truth).unwrap() <= min_fde(&preds[..k], &truth).unwrap());
        }

        #[test]
        fn metrics_are_rigid_invariant(seed in 0u64..1000, rot in -3.1f64..3.1, ox in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (preds, truth) = random_set(&mut rng, 4, 5);
            let pose = crate::geometry::LocalFrame { origin: Vec2::new(ox, -ox), rotation: rot };
            let mv = |v: &Vec<Vec2>| v.iter().map(|&p| pose.to_local(p)).collect::<Vec<_>>();
            let preds_m: Vec<_> = preds.iter().map(mv).collect();
            let truth_m = mv(&truth);
            prop_assert!((min_ade(&preds, &truth).unwrap() - min_ade(&preds_m, &truth_m).unwrap()).abs() < 1e-9);
            prop_assert!((min_fde(&preds, &truth).unwrap() - min_fde(&preds_m, &truth_m).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ade_bounded_by_worst_step(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (preds, truth) = random_set(&mut rng, 5, 8);
            let best = min_ade(&preds, &truth).unwrap();
            let worst_step = preds.iter().flat_map(|p| p.iter().zip(&truth).map(|(a, b)| a.distance(*b))).fold(0.0, f64::max);
            prop_assert!(best <= worst_step);
            let f = min_fde(&preds, &truth).unwrap();
            prop_assert!(preds.iter().any(|p| fde(p, &truth) == f));
        }
    }

    #[test]
    fn oracle_scores_zero_and_reports_serialize() {
        let data = fixture_windows(5, 6);
        let report = evaluate(&Oracle::new(&data), &data, &[1, 5], 6, 0).unwrap();
        assert_eq!(report.samples, data.len());
        assert!(report.aggregate.iter().all(|m| m.min_ade < 1e-12 && m.min_fde < 1e-12));
        let back: EvaluationReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert!(report.to_text().contains("minADE_5\t0.000000"));
        assert!(evaluate(&Oracle::new(&data), &[], &[1], 6, 0).is_err());
        assert!(evaluate(&Oracle::new(&data), &data, &[1], 7, 0).is_err());
    }

    #[test]
    fn model_metrics_nest_in_k() {
        let data: Vec<_> = fixture_windows(5, 6).into_iter().take(6).collect();
        let model = ContextVae::new(tiny_config(EncoderMode::FULL)).unwrap();
        let ks: Vec<usize> = (1..=20).collect();
        let report = evaluate(&model, &data, &ks, 6, 1).unwrap();
        for w in report.aggregate.windows(2) {
            assert!(w[1].min_ade <= w[0].min_ade);
            assert!(w[1].min_fde <= w[0].min_fde);
        }
        assert_eq!(report, evaluate(&model, &data, &ks, 6, 1).unwrap());
    }
}
