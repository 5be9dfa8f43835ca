//! Synthetic junction scenarios with map-determined maneuvers.
//!
//! Every scene is a junction of two-lane roads with right-hand traffic.
//! Vehicles approach on their incoming lane at constant speed, enter the
//! junction after the observation prefix and leave straight, left or right
//! along a cubic Bezier connector. Arm angles and the distance to the
//! junction are randomized, so where and how sharply a vehicle turns can be
//! read off the map but not off its first second of motion. The whole scene
//! is finally placed at a random world pose.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{AgentId, Frame, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, AgentState, AgentType, LocalFrame, Vec2};
use crate::map::VectorMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Straight,
    TJunction,
    FourWay,
    /// Four-way or T-junction with equal probability.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    Straight,
    Left,
    Right,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::Straight, Maneuver::Left, Maneuver::Right];

    /// Arm index offset, counter-clockwise, from the arm the vehicle enters on.
    fn arm_offset(self) -> usize {
        match self {
            Maneuver::Straight => 2,
            Maneuver::Left => 3,
            Maneuver::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnProbabilities {
    pub straight: f64,
    pub left: f64,
    pub right: f64,
}

impl TurnProbabilities {
    pub fn uniform() -> Self {
        TurnProbabilities {
            straight: 1.0 / 3.0,
            left: 1.0 / 3.0,
            right: 1.0 / 3.0,
        }
    }

    fn of(&self, m: Maneuver) -> f64 {
        match m {
            Maneuver::Straight => self.straight,
            Maneuver::Left => self.left,
            Maneuver::Right => self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub topology: Topology,
    pub vehicles_per_scene: usize,
    pub max_pedestrians_per_scene: usize,
    /// Vehicle speed range, m/s.
    pub speed_range: (f64, f64),
    pub pedestrian_speed_range: (f64, f64),
    pub turn_probabilities: TurnProbabilities,
    /// Standard deviation of Gaussian position noise, meters.
    pub noise_std: f64,
    pub fps: f64,
    pub frames: usize,
    /// Maximum deviation of each arm from its nominal direction, degrees.
    pub arm_angle_jitter_deg: f64,
    pub lane_width: f64,
    pub junction_radius: f64,
    pub arm_length: f64,
    /// Range of the time (seconds after the first frame) at which a vehicle
    /// crosses its stop line.
    pub entry_time_range: (f64, f64),
    /// Maximum world offset of the junction centre, meters.
    pub world_offset: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            topology: Topology::FourWay,
            vehicles_per_scene: 4,
            max_pedestrians_per_scene: 2,
            speed_range: (6.0, 11.0),
            pedestrian_speed_range: (1.0, 1.6),
            turn_probabilities: TurnProbabilities::uniform(),
            noise_std: 0.05,
            fps: 5.0,
            frames: 20,
            arm_angle_jitter_deg: 20.0,
            lane_width: 3.5,
            junction_radius: 10.0,
            arm_length: 110.0,
            entry_time_range: (1.2, 2.6),
            world_offset: 500.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.turn_probabilities;
        let probs = [p.straight, p.left, p.right];
        if probs.iter().any(|v| !(0.0..=1.0).contains(v)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("turn probabilities must lie in [0, 1] and sum to 1"));
        }
        let feasible = match self.topology {
            Topology::Straight => p.straight > 0.0,
            // the missing arm of a T-junction is random, so every maneuver
            // is possible from some approach
            _ => true,
        };
        if !feasible {
            return Err(Error::config(
                "a straight road admits only the straight maneuver, which has probability 0",
            ));
        }
        let ranges = [self.speed_range, self.pedestrian_speed_range, self.entry_time_range];
        if ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && hi >= lo)) {
            return Err(Error::config("speed and entry-time ranges must be positive and ordered"));
        }
        if !(self.fps > 0.0) || self.frames < 2 {
            return Err(Error::config("synthetic scenes need fps > 0 and at least 2 frames"));
        }
        if !(self.noise_std >= 0.0) || !(self.lane_width > 0.0) || !(self.junction_radius > self.lane_width) {
            return Err(Error::config(
                "noise must be non-negative and the junction wider than a lane",
            ));
        }
        if !(self.arm_length > self.junction_radius) || !(self.arm_angle_jitter_deg.abs() < 45.0) {
            return Err(Error::config("arms must extend past the junction and jitter stay below 45°"));
        }
        if self.vehicles_per_scene == 0 {
            return Err(Error::config("vehicles_per_scene must be at least 1"));
        }
        Ok(())
    }
}

/// Generator-side ground truth for one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub agent_id: AgentId,
    pub maneuver: Maneuver,
    /// Noise-free world positions at every frame.
    pub clean_positions: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub scene_id: String,
    pub agents: Vec<AgentTruth>,
}

impl ScenarioTruth {
    pub fn agent(&self, id: AgentId) -> Option<&AgentTruth> {
        self.agents.iter().find(|a| a.agent_id == id)
    }
}

/// Arc-length parameterized polyline.
struct Path {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Path {
    fn new(points: Vec<Vec2>) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += (w[1] - w[0]).norm();
            cumulative.push(acc);
        }
        Path { points, cumulative }
    }

    /// Position and tangent heading at arc length `s`, extrapolating
    /// linearly past either end.
    fn at(&self, s: f64) -> (Vec2, f64) {
        let n = self.points.len();
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let dir = (b - a) * (1.0 / seg);
        (a + dir * (s - self.cumulative[i]), dir.angle())
    }
}

fn bezier(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, samples: usize) -> Vec<Vec2> {
    (0..=samples)
        .map(|i| {
            let t = i as f64 / samples as f64;
            let u = 1.0 - t;
            p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
        })
        .collect()
}

fn segment(a: Vec2, b: Vec2, step: f64) -> Vec<Vec2> {
    let n = ((b - a).norm() / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}

fn rectangle(center_start: Vec2, center_end: Vec2, half_width: f64) -> Vec<Vec2> {
    let dir = center_end - center_start;
    let normal = Vec2::from_angle(dir.angle() + FRAC_PI_2) * half_width;
    vec![
        center_start - normal,
        center_end - normal,
        center_end + normal,
        center_start + normal,
    ]
}

/// Junction layout in the scene's own frame (centre at the origin).
struct Junction {
    /// Arm direction angles, counter-clockwise order; `None` for a missing arm.
    arms: [Option<f64>; 4],
    lane_width: f64,
    radius: f64,
    length: f64,
}

impl Junction {
    fn dir(&self, arm: usize) -> Vec2 {
        Vec2::from_angle(self.arms[arm].expect("arm present"))
    }

    /// Right-hand normal of a direction of travel.
    fn right_of(dir: Vec2) -> Vec2 {
        Vec2::new(dir.y, -dir.x)
    }

    fn incoming_lane(&self, arm: usize) -> (Vec2, Vec2) {
        let u = self.dir(arm);
        let offset = Self::right_of(-u) * (self.lane_width / 2.0);
        (u * self.length + offset, u * self.radius + offset)
    }

    fn outgoing_lane(&self, arm: usize) -> (Vec2, Vec2) {
        let u = self.dir(arm);
        let offset = Self::right_of(u) * (self.lane_width / 2.0);
        (u * self.radius + offset, u * self.length + offset)
    }

    fn connector(&self, from: usize, to: usize) -> Vec<Vec2> {
        let (_, entry) = self.incoming_lane(from);
        let (exit, _) = self.outgoing_lane(to);
        let k = 0.55 * self.radius;
        bezier(entry, entry - self.dir(from) * k, exit - self.dir(to) * k, exit, 24)
    }

    /// Dense route from the far end of `from` to the far end of `to`.
    fn route(&self, from: usize, to: usize) -> Path {
        let (a0, a1) = self.incoming_lane(from);
        let (b0, b1) = self.outgoing_lane(to);
        let mut pts = segment(a0, a1, 0.5);
        pts.pop();
        pts.extend(self.connector(from, to));
        pts.pop();
        pts.extend(segment(b0, b1, 0.5));
        Path::new(pts)
    }

    fn vector_map(&self) -> VectorMap {
        let mut map = VectorMap::default();
        let hw = self.lane_width;
        // central area, slightly larger than the stop-line circle
        let r = self.radius + 1.0;
        map.drivable_areas
            .push((0..16).map(|i| Vec2::from_angle(i as f64 * PI / 8.0) * r).collect());
        for arm in 0..4 {
            if self.arms[arm].is_none() {
                continue;
            }
            let u = self.dir(arm);
            let n = Vec2::from_angle(u.angle() + FRAC_PI_2);
            map.drivable_areas
                .push(rectangle(u * (self.radius * 0.5), u * self.length, hw));
            map.road_dividers.push(vec![u * self.radius, u * self.length]);
            for side in [-1.0, 1.0] {
                map.lane_dividers
                    .push(vec![u * self.radius + n * (side * hw), u * self.length + n * (side * hw)]);
            }
            map.crosswalks
                .push(rectangle(u * (self.radius + 1.0), u * (self.radius + 4.0), hw));
            let (a, b) = self.incoming_lane(arm);
            map.lane_centerlines.push(vec![a, b]);
            let (a, b) = self.outgoing_lane(arm);
            map.lane_centerlines.push(vec![a, b]);
            for to in 0..4 {
                if to != arm && self.arms[to].is_some() {
                    map.lane_centerlines.push(self.connector(arm, to));
                }
            }
        }
        map
    }
}

/// Draws `n` scenes and their ground truth. Deterministic in `config.seed`;
/// scene `i` only depends on the seed and `i`.
pub fn generate_scenarios(config: &SyntheticConfig, n: usize) -> Result<Vec<(SceneRecord, ScenarioTruth)>> {
    config.validate()?;
    (0..n).map(|i| generate_scene(config, i)).collect()
}

fn generate_scene(config: &SyntheticConfig, index: usize) -> Result<(SceneRecord, ScenarioTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);
    let jitter = config.arm_angle_jitter_deg.to_radians();
    let mut arms = [None; 4];
    for (a, slot) in arms.iter_mut().enumerate() {
        *slot = Some(a as f64 * FRAC_PI_2 + rng.gen_range(-jitter..=jitter));
    }
    let topology = match config.topology {
        Topology::Mixed if rng.gen_bool(0.5) => Topology::TJunction,
        Topology::Mixed => Topology::FourWay,
        t => t,
    };
    match topology {
        Topology::TJunction => arms[rng.gen_range(0..4)] = None,
        Topology::Straight => {
            arms[1] = None;
            arms[3] = None;
        }
        _ => {}
    }
    let junction = Junction {
        arms,
        lane_width: config.lane_width,
        radius: config.junction_radius,
        length: config.arm_length,
    };
    let present: Vec<usize> = (0..4).filter(|&a| arms[a].is_some()).collect();

    let scene_id = format!("synthetic-{}-{index:06}", config.seed);
    let dt = 1.0 / config.fps;
    let noise = Normal::new(0.0, config.noise_std.max(0.0)).expect("finite std");
    let mut tracks: BTreeMap<AgentId, (AgentType, Vec<(Vec2, f64)>)> = BTreeMap::new();
    let mut truths = Vec::new();

    // vehicles: cycle through the present arms starting at a random one
    let first = rng.gen_range(0..present.len());
    for v in 0..config.vehicles_per_scene {
        let from = present[(first + v) % present.len()];
        let options: Vec<(Maneuver, usize, f64)> = Maneuver::ALL
            .iter()
            .map(|&m| (m, (from + m.arm_offset()) % 4, config.turn_probabilities.of(m)))
            .filter(|&(_, to, p)| arms[to].is_some() && p > 0.0)
            .collect();
        if options.is_empty() {
            return Err(Error::config(format!(
                "no maneuver with positive probability is available from arm {from}"
            )));
        }
        let total: f64 = options.iter().map(|o| o.2).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut choice = options[options.len() - 1];
        for &o in &options {
            if u < o.2 {
                choice = o;
                break;
            }
            u -= o.2;
        }
        let (maneuver, to, _) = choice;
        let speed = rng.gen_range(config.speed_range.0..=config.speed_range.1);
        let entry = rng.gen_range(config.entry_time_range.0..=config.entry_time_range.1);
        let path = junction.route(from, to);
        // distance from the far end of the arm to the stop line
        let to_stop = config.arm_length - config.junction_radius;
        let s0 = to_stop - speed * entry;
        let clean: Vec<(Vec2, f64)> = (0..config.frames)
            .map(|t| path.at(s0 + speed * t as f64 * dt))
            .collect();
        let id = v as AgentId + 1;
        truths.push(AgentTruth {
            agent_id: id,
            maneuver,
            clean_positions: clean.iter().map(|c| c.0).collect(),
        });
        tracks.insert(id, (AgentType::Vehicle, clean));
    }

    // pedestrians walk across a crosswalk
    let n_ped = rng.gen_range(0..=config.max_pedestrians_per_scene);
    for p in 0..n_ped {
        let arm = *present.choose(&mut rng).expect("at least one arm");
        let u = junction.dir(arm);
        let nrm = Vec2::from_angle(u.angle() + FRAC_PI_2);
        let along = u * (config.junction_radius + 2.5);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let start = along + nrm * (side * (config.lane_width + 1.5));
        let speed = rng.gen_range(config.pedestrian_speed_range.0..=config.pedestrian_speed_range.1);
        let dir = nrm * -side;
        let offset = rng.gen_range(0.0..2.0 * config.lane_width);
        let clean: Vec<(Vec2, f64)> = (0..config.frames)
            .map(|t| (start + dir * (offset + speed * t as f64 * dt - config.lane_width), dir.angle()))
            .collect();
        tracks.insert(1000 + p as AgentId, (AgentType::Pedestrian, clean));
    }

    // random world pose
    let pose = LocalFrame {
        origin: Vec2::new(
            rng.gen_range(-config.world_offset..=config.world_offset),
            rng.gen_range(-config.world_offset..=config.world_offset),
        ),
        rotation: rng.gen_range(-PI..PI),
    };
    let mut frames: Vec<Frame> = (0..config.frames)
        .map(|t| Frame {
            timestamp: t as f64 * dt,
            agents: BTreeMap::new(),
        })
        .collect();
    for (&id, (kind, clean)) in &tracks {
        for (t, &(p, heading)) in clean.iter().enumerate() {
            let jittered = p + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let mut state = AgentState::at(pose.to_world(jittered), wrap_angle(heading + pose.rotation));
            state.agent_type = *kind;
            frames[t].agents.insert(id, state);
        }
    }
    for truth in &mut truths {
        truth.clean_positions.iter_mut().for_each(|p| *p = pose.to_world(*p));
    }
    let mut scene = SceneRecord {
        scene_id: scene_id.clone(),
        frames,
        vector_map: junction.vector_map().map_points(|p| pose.to_world(p)),
        fps: config.fps,
        objects_of_interest: truths.iter().map(|t| t.agent_id).collect(),
    };
    scene.recompute_kinematics()?;
    Ok((
        scene,
        ScenarioTruth {
            scene_id,
            agents: truths,
        },
    ))
}
