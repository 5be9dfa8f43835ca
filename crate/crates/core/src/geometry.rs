//! Agent-state arithmetic, local frames, displacement conversion and
//! neighbor/social-feature queries.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::data::scene::{AgentId, SceneRecord};
use crate::error::{Error, Result};

/// Below this speed (m/s) the velocity direction is treated as noise and the
/// stored heading field is used instead.
pub const STATIONARY_SPEED: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise rotation by `theta` radians.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn from_angle(theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c, s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
    #[default]
    Other,
}

impl AgentType {
    /// Maps a dataset type tag onto the four known classes; anything
    /// unrecognised becomes `Other`.
    pub fn from_tag(tag: &str) -> Self {
        match tag.to_ascii_lowercase().as_str() {
            "vehicle" | "car" | "truck" | "bus" => AgentType::Vehicle,
            "pedestrian" | "person" => AgentType::Pedestrian,
            "cyclist" | "bicycle" | "bicyclist" => AgentType::Cyclist,
            _ => AgentType::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    pub heading: f64,
    pub agent_type: AgentType,
    pub valid: bool,
}

impl AgentState {
    pub fn at(position: Vec2, heading: f64) -> Self {
        AgentState {
            position,
            velocity: Vec2::ZERO,
            acceleration: Vec2::ZERO,
            heading,
            agent_type: AgentType::Other,
            valid: true,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.velocity.is_finite()
            && self.acceleration.is_finite()
            && self.heading.is_finite()
    }

    /// Direction of travel: velocity direction when moving, otherwise the
    /// stored heading field.
    pub fn motion_heading(&self) -> f64 {
        if self.velocity.norm() >= STATIONARY_SPEED {
            self.velocity.angle()
        } else {
            wrap_angle(self.heading)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialFeatures {
    pub distance: f64,
    pub bearing: f64,
    pub min_predicted_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborView {
    pub agent_id: AgentId,
    pub agent_type: AgentType,
    pub rel_position: Vec2,
    pub rel_velocity: Vec2,
    pub social: SocialFeatures,
}

/// Rigid transform taking world coordinates into an agent-centred frame whose
/// +x axis is the anchor's heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: Vec2,
    pub rotation: f64,
}

impl LocalFrame {
    pub const IDENTITY: LocalFrame = LocalFrame {
        origin: Vec2::ZERO,
        rotation: 0.0,
    };

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(-self.rotation)
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) + self.origin
    }

    pub fn vector_to_local(&self, v: Vec2) -> Vec2 {
        v.rotate(-self.rotation)
    }

    pub fn vector_to_world(&self, v: Vec2) -> Vec2 {
        v.rotate(self.rotation)
    }

    pub fn heading_to_local(&self, heading: f64) -> f64 {
        wrap_angle(heading - self.rotation)
    }

    /// Expresses a full agent state in this frame.
    pub fn state_to_local(&self, s: &AgentState) -> AgentState {
        AgentState {
            position: self.to_local(s.position),
            velocity: self.vector_to_local(s.velocity),
            acceleration: self.vector_to_local(s.acceleration),
            heading: self.heading_to_local(s.heading),
            ..*s
        }
    }
}

pub fn build_local_frame(anchor: &AgentState) -> Result<LocalFrame> {
    if !anchor.is_finite() {
        return Err(Error::invalid("local frame anchor has non-finite fields"));
    }
    Ok(LocalFrame {
        origin: anchor.position,
        rotation: anchor.motion_heading(),
    })
}

pub fn to_displacements(positions: &[Vec2]) -> Result<Vec<Vec2>> {
    if positions.is_empty() {
        return Err(Error::invalid("displacements need at least one position"));
    }
    Ok(positions.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Cumulative sum of `displacements` starting from `last_position`; the
/// starting point itself is not part of the output.
pub fn reconstruct_trajectory(last_position: Vec2, displacements: &[Vec2]) -> Vec<Vec2> {
    displacements
        .iter()
        .scan(last_position, |acc, d| {
            *acc += *d;
            Some(*acc)
        })
        .collect()
}

/// Distance, bearing and closest-approach distance of a neighbor as seen by
/// `ego`. Both must be expressed in the same frame; the neighbor's relative
/// quantities are neighbor minus ego.
pub fn compute_social_features(
    ego: &AgentState,
    rel_position: Vec2,
    rel_velocity: Vec2,
    horizon_cap: f64,
) -> SocialFeatures {
    let distance = rel_position.norm();
    let bearing = if distance > 0.0 {
        wrap_angle(rel_position.angle() - ego.motion_heading())
    } else {
        0.0
    };
    let speed_sq = rel_velocity.norm_squared();
    let t_star = if speed_sq > 0.0 {
        (-rel_position.dot(rel_velocity) / speed_sq).clamp(0.0, horizon_cap.max(0.0))
    } else {
        0.0
    };
    let closest = (rel_position + rel_velocity * t_star).norm();
    SocialFeatures {
        distance,
        bearing,
        // t* = 0 is always admissible, so the minimum cannot exceed the
        // current distance; the min() only absorbs rounding.
        min_predicted_distance: closest.min(distance),
    }
}

/// Velocity and acceleration by backward differences. The first velocity is
/// copied from the second frame and the first accelerations from the first
/// computable one.
pub fn finite_difference_states(positions: &[Vec2], dt: f64) -> Result<Vec<AgentState>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let n = positions.len();
    let mut velocity = vec![Vec2::ZERO; n];
    for t in 1..n {
        velocity[t] = (positions[t] - positions[t - 1]) * (1.0 / dt);
    }
    if n >= 2 {
        velocity[0] = velocity[1];
    }
    let mut acceleration = vec![Vec2::ZERO; n];
    if n >= 3 {
        for t in 2..n {
            acceleration[t] = (velocity[t] - velocity[t - 1]) * (1.0 / dt);
        }
        acceleration[0] = acceleration[2];
        acceleration[1] = acceleration[2];
    }
    let mut last_heading = 0.0;
    Ok(positions
        .iter()
        .zip(velocity.iter().zip(acceleration.iter()))
        .map(|(&position, (&velocity, &acceleration))| {
            if velocity.norm() >= STATIONARY_SPEED {
                last_heading = velocity.angle();
            }
            AgentState {
                position,
                velocity,
                acceleration,
                heading: last_heading,
                agent_type: AgentType::Other,
                valid: true,
            }
        })
        .collect())
}

/// Neighbors of `target_id` at frame `t` expressed in the target's own local
/// frame at that frame.
pub fn query_neighbors(
    scene: &SceneRecord,
    target_id: AgentId,
    t: usize,
    radius: f64,
    horizon_cap: f64,
) -> Result<Vec<NeighborView>> {
    let target = scene.state(t, target_id)?;
    let frame = build_local_frame(target)?;
    query_neighbors_in(scene, target_id, t, radius, horizon_cap, &frame)
}

/// Neighbors within the closed ball of `radius` around the target at frame
/// `t`, with relative quantities rotated into `frame`. Ordered by ascending
/// distance, ties broken by agent id.
pub fn query_neighbors_in(
    scene: &SceneRecord,
    target_id: AgentId,
    t: usize,
    radius: f64,
    horizon_cap: f64,
    frame: &LocalFrame,
) -> Result<Vec<NeighborView>> {
    let target = scene.state(t, target_id)?;
    if !target.valid {
        return Err(Error::invalid(format!(
            "target {target_id} is not valid at frame {t}"
        )));
    }
    let ego = frame.state_to_local(target);
    let mut out: Vec<NeighborView> = scene.frames[t]
        .agents
        .iter()
        .filter(|(&id, s)| id != target_id && s.valid)
        .filter(|(_, s)| (s.position - target.position).norm() <= radius)
        .map(|(&id, s)| {
            let rel_position = frame.vector_to_local(s.position - target.position);
            let rel_velocity = frame.vector_to_local(s.velocity - target.velocity);
            NeighborView {
                agent_id: id,
                agent_type: s.agent_type,
                rel_position,
                rel_velocity,
                social: compute_social_features(&ego, rel_position, rel_velocity, horizon_cap),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.social
            .distance
            .total_cmp(&b.social.distance)
            .then(a.agent_id.cmp(&b.agent_id))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_vec(a: Vec2, b: Vec2, tol: f64) {
        assert!((a - b).norm() <= tol, "{a:?} != {b:?}");
    }

    #[test]
    fn frame_translation_only() {
        let f = build_local_frame(&AgentState::at(Vec2::new(5.0, 5.0), 0.0)).unwrap();
        assert_vec(f.to_local(Vec2::new(5.0, 5.0)), Vec2::ZERO, 1e-12);
        assert_vec(f.to_local(Vec2::new(6.0, 5.0)), Vec2::new(1.0, 0.0), 1e-12);
    }

    #[test]
    fn frame_quarter_turn() {
        let f = build_local_frame(&AgentState::at(Vec2::ZERO, PI / 2.0)).unwrap();
        assert_vec(f.to_local(Vec2::new(0.0, 1.0)), Vec2::new(1.0, 0.0), 1e-12);
    }

    #[test]
    fn frame_eighth_turn() {
        let f = build_local_frame(&AgentState::at(Vec2::new(3.0, -2.0), PI / 4.0)).unwrap();
        let s = 2f64.sqrt();
        assert_vec(f.to_local(Vec2::new(3.0 + s, -2.0 + s)), Vec2::new(2.0, 0.0), 1e-12);
    }

    #[test]
    fn frame_uses_velocity_when_moving() {
        let mut a = AgentState::at(Vec2::ZERO, 1.0);
        a.velocity = Vec2::new(0.0, -2.0);
        assert_abs_diff_eq!(build_local_frame(&a).unwrap().rotation, -PI / 2.0);
        a.velocity = Vec2::new(0.05, 0.0);
        assert_abs_diff_eq!(build_local_frame(&a).unwrap().rotation, 1.0);
    }

    #[test]
    fn frame_rejects_non_finite() {
        let a = AgentState::at(Vec2::new(f64::NAN, 0.0), 0.0);
        assert!(matches!(build_local_frame(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn frame_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let f = LocalFrame {
                origin: Vec2::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3)),
                rotation: rng.gen_range(-PI..PI),
            };
            let p = Vec2::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
            assert_vec(f.to_world(f.to_local(p)), p, 1e-9);
        }
    }

    #[test]
    fn displacements_examples() {
        let p = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(3.0, 1.0)];
        assert_eq!(
            to_displacements(&p).unwrap(),
            vec![Vec2::new(1.0, 1.0), Vec2::new(2.0, 0.0)]
        );
        assert!(to_displacements(&[Vec2::new(2.0, 2.0)]).unwrap().is_empty());
        assert!(to_displacements(&[]).is_err());
    }

    #[test]
    fn displacements_match_subtraction_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: Vec<Vec2> = (0..10)
            .map(|_| Vec2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)))
            .collect();
        let d = to_displacements(&p).unwrap();
        assert_eq!(d.len(), 9);
        for i in 0..9 {
            assert_eq!(d[i].x, p[i + 1].x - p[i].x);
            assert_eq!(d[i].y, p[i + 1].y - p[i].y);
        }
    }

    #[test]
    fn reconstruct_examples() {
        let r = reconstruct_trajectory(Vec2::ZERO, &[Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0)]);
        assert_eq!(r, vec![Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)]);
        assert!(reconstruct_trajectory(Vec2::new(5.0, 5.0), &[]).is_empty());
    }

    #[test]
    fn social_features_parallel_motion() {
        let mut ego = AgentState::at(Vec2::ZERO, 0.0);
        ego.velocity = Vec2::new(1.0, 0.0);
        let f = compute_social_features(&ego, Vec2::new(4.0, 0.0), Vec2::ZERO, 6.0);
        assert_abs_diff_eq!(f.distance, 4.0);
        assert_abs_diff_eq!(f.bearing, 0.0);
        assert_abs_diff_eq!(f.min_predicted_distance, 4.0);
    }

    #[test]
    fn social_features_head_on() {
        let mut ego = AgentState::at(Vec2::ZERO, 0.0);
        ego.velocity = Vec2::new(1.0, 0.0);
        // neighbor velocity (-1,0) → relative (-2,0); closest approach at t*=2
        let f = compute_social_features(&ego, Vec2::new(4.0, 0.0), Vec2::new(-2.0, 0.0), 6.0);
        assert_abs_diff_eq!(f.min_predicted_distance, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn social_features_against_time_sweep() {
        let mut ego = AgentState::at(Vec2::ZERO, 0.0);
        ego.velocity = Vec2::new(1.0, 0.0);
        let dp = Vec2::new(0.0, 3.0);
        let dv = Vec2::new(1.0, -1.0) - ego.velocity;
        let cap = 10.0;
        let mut best = f64::INFINITY;
        let mut t = 0.0;
        while t <= cap {
            best = best.min((dp + dv * t).norm());
            t += 1e-4;
        }
        let f = compute_social_features(&ego, dp, dv, cap);
        assert_abs_diff_eq!(f.min_predicted_distance, best, epsilon = 1e-4);
        assert_abs_diff_eq!(f.bearing, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn social_features_ahead_and_behind() {
        let mut ego = AgentState::at(Vec2::ZERO, 0.3);
        ego.velocity = Vec2::from_angle(0.3) * 5.0;
        let ahead = compute_social_features(&ego, Vec2::from_angle(0.3) * 7.0, Vec2::ZERO, 3.0);
        assert_abs_diff_eq!(ahead.bearing, 0.0, epsilon = 1e-12);
        let behind = compute_social_features(&ego, Vec2::from_angle(0.3) * -7.0, Vec2::ZERO, 3.0);
        assert_abs_diff_eq!(behind.bearing, PI, epsilon = 1e-12);
    }

    #[test]
    fn finite_difference_line() {
        let p: Vec<Vec2> = (0..6).map(|i| Vec2::new(2.0 * i as f64, 0.0)).collect();
        for s in finite_difference_states(&p, 0.5).unwrap() {
            assert_vec(s.velocity, Vec2::new(4.0, 0.0), 1e-12);
            assert_vec(s.acceleration, Vec2::ZERO, 1e-12);
        }
    }

    #[test]
    fn finite_difference_quadratic() {
        let p: Vec<Vec2> = (0..6).map(|i| Vec2::new((i * i) as f64, 0.0)).collect();
        let s = finite_difference_states(&p, 1.0).unwrap();
        // d²/dt² t² = 2 everywhere once two velocities exist
        for st in &s {
            assert_vec(st.acceleration, Vec2::new(2.0, 0.0), 1e-12);
        }
        assert_vec(s[3].velocity, Vec2::new(5.0, 0.0), 1e-12);
    }

    #[test]
    fn finite_difference_two_points() {
        let s = finite_difference_states(&[Vec2::ZERO, Vec2::new(1.0, 1.0)], 0.5).unwrap();
        assert_vec(s[0].velocity, Vec2::new(2.0, 2.0), 1e-12);
        assert_vec(s[1].velocity, Vec2::new(2.0, 2.0), 1e-12);
        assert_vec(s[0].acceleration, Vec2::ZERO, 0.0);
        assert_vec(s[1].acceleration, Vec2::ZERO, 0.0);
    }

    #[test]
    fn finite_difference_rejects_bad_dt() {
        assert!(finite_difference_states(&[Vec2::ZERO], 0.0).is_err());
        assert!(finite_difference_states(&[Vec2::ZERO], -1.0).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.5), 0.5);
    }

    proptest::proptest! {
        #[test]
        fn round_trip_trajectory(pts in proptest::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 1..40)) {
            let p: Vec<Vec2> = pts.into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
            let d = to_displacements(&p).unwrap();
            let r = reconstruct_trajectory(p[0], &d);
            for (a, b) in r.iter().zip(&p[1..]) {
                proptest::prop_assert!((*a - *b).norm() <= 1e-9);
            }
        }

        #[test]
        fn mpd_never_exceeds_distance(px in -40f64..40.0, py in -40f64..40.0,
                                      vx in -20f64..20.0, vy in -20f64..20.0,
                                      h in -PI..PI, cap in 0.1f64..10.0) {
            let ego = AgentState::at(Vec2::ZERO, h);
            let f = compute_social_features(&ego, Vec2::new(px, py), Vec2::new(vx, vy), cap);
            proptest::prop_assert!(f.min_predicted_distance <= f.distance);
            proptest::prop_assert!(f.min_predicted_distance >= 0.0);
            proptest::prop_assert!(f.bearing > -PI && f.bearing <= PI);
        }
    }
}
