//! Observation windows, future ground truth and frame-rate conversion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{AgentId, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{build_local_frame, query_neighbors_in, to_displacements, LocalFrame, NeighborView, Vec2};
use crate::map::{rasterize, RasterMap};

/// Velocity and acceleration in the window's local frame.
pub type SelfState = [f64; 4];

/// Localized inputs for one target agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub scene_id: String,
    pub target_id: AgentId,
    /// Scene index of the first observed frame.
    pub start: usize,
    /// Local frame of the target at the first observed frame.
    pub frame: LocalFrame,
    pub dt: f64,
    pub self_states: Vec<SelfState>,
    /// Observed target positions in the local frame.
    pub positions: Vec<Vec2>,
    pub neighbors: Vec<Vec<NeighborView>>,
    pub raster: RasterMap,
}

impl ObservationWindow {
    /// Number of observed frames T.
    pub fn len(&self) -> usize {
        self.self_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.self_states.is_empty()
    }

    pub fn last_position(&self) -> Vec2 {
        *self.positions.last().expect("window has observed frames")
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t < 2 {
            return Err(Error::invalid(format!("observation window needs T ≥ 2, got {t}")));
        }
        if self.positions.len() != t || self.neighbors.len() != t {
            return Err(Error::invalid("observation window fields disagree on T"));
        }
        Ok(())
    }
}

/// Ground-truth future of a window, in the window's local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureTruth {
    pub positions: Vec<Vec2>,
    /// `positions[τ] − positions[τ−1]`, with the last observed position
    /// preceding the first entry.
    pub displacements: Vec<Vec2>,
    pub self_states: Vec<SelfState>,
    pub neighbors: Vec<Vec<NeighborView>>,
}

impl FutureTruth {
    pub fn horizon(&self) -> usize {
        self.positions.len()
    }

    /// The first `h` steps.
    pub fn truncated(&self, h: usize) -> FutureTruth {
        let h = h.min(self.horizon());
        FutureTruth {
            positions: self.positions[..h].to_vec(),
            displacements: self.displacements[..h].to_vec(),
            self_states: self.self_states[..h].to_vec(),
            neighbors: self.neighbors[..h].to_vec(),
        }
    }

    pub fn world_positions(&self, frame: &LocalFrame) -> Vec<Vec2> {
        self.positions.iter().map(|&p| frame.to_world(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub t_min: usize,
    pub t_max: usize,
    pub horizon: usize,
    pub radius: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::fixed(5, 15, 30.0)
    }
}

impl WindowSpec {
    pub fn fixed(t: usize, horizon: usize, radius: f64) -> Self {
        WindowSpec {
            t_min: t,
            t_max: t,
            horizon,
            radius,
        }
    }
}

/// Sliding windows over every target. For each candidate current frame `c`
/// the observation covers the last `min(t_max, c + 1)` frames; a window is
/// kept only if that is at least `t_min`, the horizon fits inside the
/// scene and the target is valid on every frame involved. The raster is
/// drawn once per window in the frame of its first observation.
pub fn make_windows(
    scene: &SceneRecord,
    target_ids: &[AgentId],
    spec: &WindowSpec,
) -> Result<Vec<(ObservationWindow, FutureTruth)>> {
    if spec.t_min < 2 || spec.t_max < spec.t_min || spec.horizon < 1 || !(spec.radius > 0.0) {
        return Err(Error::invalid(format!("invalid window spec {spec:?}")));
    }
    let len = scene.len();
    let dt = scene.dt();
    let horizon_cap = spec.horizon as f64 * dt;
    let mut out = Vec::new();
    for &id in target_ids {
        for current in spec.t_min - 1..len {
            if current + spec.horizon >= len {
                break;
            }
            let t = spec.t_max.min(current + 1);
            let start = current + 1 - t;
            let end = current + spec.horizon;
            if (start..=end).any(|k| scene.valid_state(k, id).is_none()) {
                continue;
            }
            out.push(build_window(scene, id, start, t, spec, horizon_cap)?);
        }
    }
    Ok(out)
}

fn build_window(
    scene: &SceneRecord,
    id: AgentId,
    start: usize,
    t: usize,
    spec: &WindowSpec,
    horizon_cap: f64,
) -> Result<(ObservationWindow, FutureTruth)> {
    let anchor = scene.state(start, id)?;
    let frame = build_local_frame(anchor)?;
    let local = |k: usize| -> Result<(Vec2, SelfState, Vec<NeighborView>)> {
        let s = frame.state_to_local(scene.state(k, id)?);
        let neighbors = query_neighbors_in(scene, id, k, spec.radius, horizon_cap, &frame)?;
        Ok((
            s.position,
            [s.velocity.x, s.velocity.y, s.acceleration.x, s.acceleration.y],
            neighbors,
        ))
    };
    let mut positions = Vec::with_capacity(t);
    let mut self_states = Vec::with_capacity(t);
    let mut neighbors = Vec::with_capacity(t);
    for k in start..start + t {
        let (p, s, n) = local(k)?;
        positions.push(p);
        self_states.push(s);
        neighbors.push(n);
    }
    let mut future = FutureTruth {
        positions: Vec::with_capacity(spec.horizon),
        displacements: Vec::new(),
        self_states: Vec::with_capacity(spec.horizon),
        neighbors: Vec::with_capacity(spec.horizon),
    };
    for k in start + t..start + t + spec.horizon {
        let (p, s, n) = local(k)?;
        future.positions.push(p);
        future.self_states.push(s);
        future.neighbors.push(n);
    }
    let mut chain = vec![*positions.last().expect("t ≥ 2")];
    chain.extend_from_slice(&future.positions);
    future.displacements = to_displacements(&chain)?;
    let window = ObservationWindow {
        scene_id: scene.scene_id.clone(),
        target_id: id,
        start,
        frame,
        dt: scene.dt(),
        self_states,
        positions,
        neighbors,
        raster: rasterize(&scene.vector_map, &frame),
    };
    Ok((window, future))
}

/// Windows over the objects of interest of every scene (all agents when a
/// scene lists none), after downsampling. Scene order is preserved.
pub fn build_dataset(
    scenes: &[SceneRecord],
    spec: &WindowSpec,
    downsample_factor: usize,
) -> Result<Vec<(ObservationWindow, FutureTruth)>> {
    let per_scene: Vec<Vec<_>> = scenes
        .par_iter()
        .map(|scene| {
            let scene = downsample(scene, downsample_factor)?;
            let targets: Vec<AgentId> = if scene.objects_of_interest.is_empty() {
                scene.agent_ids().into_iter().collect()
            } else {
                scene.objects_of_interest.clone()
            };
            make_windows(&scene, &targets, spec)
        })
        .collect::<Result<_>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

/// Keeps every `factor`-th frame starting at index 0 and recomputes the
/// kinematics at the new frame spacing.
pub fn downsample(scene: &SceneRecord, factor: usize) -> Result<SceneRecord> {
    if factor < 1 {
        return Err(Error::invalid("downsample factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(scene.clone());
    }
    let mut out = SceneRecord {
        scene_id: scene.scene_id.clone(),
        frames: scene.frames.iter().step_by(factor).cloned().collect(),
        vector_map: scene.vector_map.clone(),
        fps: scene.fps / factor as f64,
        objects_of_interest: scene.objects_of_interest.clone(),
    };
    out.recompute_kinematics()?;
    Ok(out)
}

/// Applies a rigid world transform to every position, heading, velocity
/// and map vertex of a scene.
pub fn transform_scene(scene: &SceneRecord, pose: &LocalFrame) -> SceneRecord {
    let mut out = scene.clone();
    for frame in &mut out.frames {
        for s in frame.agents.values_mut() {
            s.position = pose.to_world(s.position);
            s.velocity = pose.vector_to_world(s.velocity);
            s.acceleration = pose.vector_to_world(s.acceleration);
            s.heading = crate::geometry::wrap_angle(s.heading + pose.rotation);
        }
    }
    out.vector_map = scene.vector_map.map_points(|p| pose.to_world(p));
    out
}
