//! Deterministic reference predictors.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

fn check_observed(observed: &[Vec2]) -> Result<()> {
    if observed.len() < 2 {
        return Err(Error::invalid(format!(
            "baselines need at least 2 observed frames, got {}",
            observed.len()
        )));
    }
    if observed.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("observed positions must be finite"));
    }
    Ok(())
}

/// Extrapolates the last observed step: x^{T+τ} = x^T + τ (x^T − x^{T−1}).
pub fn constant_velocity_predict(observed: &[Vec2], horizon: usize) -> Result<Vec<Vec2>> {
    check_observed(observed)?;
    let last = observed[observed.len() - 1];
    let step = last - observed[observed.len() - 2];
    Ok((1..=horizon).map(|tau| last + step * tau as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfConfig {
    /// Process noise variance on speed and on heading, per step.
    pub process_noise: f64,
    /// Measurement noise variance per position axis, m².
    pub measurement_noise: f64,
    /// Initial state covariance (diagonal).
    pub initial_covariance: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            process_noise: 1e-2,
            measurement_noise: 1e-1,
            initial_covariance: 1.0,
        }
    }
}

/// State (x, y, speed, heading) propagated with constant speed and heading.
fn propagate(s: &Vector4<f64>, dt: f64) -> Vector4<f64> {
    Vector4::new(s[0] + s[2] * s[3].cos() * dt, s[1] + s[2] * s[3].sin() * dt, s[2], s[3])
}

fn jacobian(s: &Vector4<f64>, dt: f64) -> Matrix4<f64> {
    let (sin, cos) = s[3].sin_cos();
    let mut f = Matrix4::identity();
    f[(0, 2)] = cos * dt;
    f[(0, 3)] = -s[2] * sin * dt;
    f[(1, 2)] = sin * dt;
    f[(1, 3)] = s[2] * cos * dt;
    f
}

/// Filtered (x, y, speed, heading) after the last observation. The state is
/// initialized at the second frame from the first finite difference.
pub fn ekf_filter(observed: &[Vec2], dt: f64, config: &EkfConfig) -> Result<Vector4<f64>> {
    check_observed(observed)?;
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let d = observed[1] - observed[0];
    let mut s = Vector4::new(observed[1].x, observed[1].y, d.norm() / dt, d.y.atan2(d.x));
    let mut p = Matrix4::identity() * config.initial_covariance;
    let q = Matrix4::from_diagonal(&Vector4::new(0.0, 0.0, config.process_noise, config.process_noise));
    let r = Matrix2::identity() * config.measurement_noise;
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    for z in &observed[2..] {
        let f = jacobian(&s, dt);
        s = propagate(&s, dt);
        p = f * p * f.transpose() + q;
        let innovation = Vector2::new(z.x - s[0], z.y - s[1]);
        let cov = h * p * h.transpose() + r;
        let inv = cov
            .try_inverse()
            .ok_or_else(|| Error::Numerical {
                message: "singular innovation covariance".into(),
                dump: None,
            })?;
        let gain: Matrix4x2<f64> = p * h.transpose() * inv;
        s += gain * innovation;
        p = (Matrix4::identity() - gain * h) * p;
    }
    Ok(s)
}

/// Extended Kalman filter over the observation followed by an open-loop
/// constant-speed, constant-heading rollout.
pub fn kalman_predict(observed: &[Vec2], dt: f64, horizon: usize, config: &EkfConfig) -> Result<Vec<Vec2>> {
    let mut s = ekf_filter(observed, dt, config)?;
    Ok((0..horizon)
        .map(|_| {
            s = propagate(&s, dt);
            Vec2::new(s[0], s[1])
        })
        .collect())
}
