use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{finite_difference_states, AgentState, Vec2};
use crate::map::VectorMap;

pub type AgentId = u64;

/// Relative tolerance on frame spacing when validating timestamps.
const SPACING_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Frame {
    pub timestamp: f64,
    pub agents: BTreeMap<AgentId, AgentState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub frames: Vec<Frame>,
    pub vector_map: VectorMap,
    pub fps: f64,
    pub objects_of_interest: Vec<AgentId>,
}

impl SceneRecord {
    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn state(&self, t: usize, id: AgentId) -> Result<&AgentState> {
        self.frames
            .get(t)
            .ok_or_else(|| Error::NotFound(format!("frame {t} in scene {}", self.scene_id)))?
            .agents
            .get(&id)
            .ok_or_else(|| {
                Error::NotFound(format!(
                    "agent {id} at frame {t} in scene {}",
                    self.scene_id
                ))
            })
    }

    /// Present-and-valid state of an agent, if any.
    pub fn valid_state(&self, t: usize, id: AgentId) -> Option<&AgentState> {
        self.frames
            .get(t)
            .and_then(|f| f.agents.get(&id))
            .filter(|s| s.valid)
    }

    pub fn agent_ids(&self) -> BTreeSet<AgentId> {
        self.frames
            .iter()
            .flat_map(|f| f.agents.keys().copied())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::invalid(format!(
                "scene {}: fps must be positive",
                self.scene_id
            )));
        }
        let dt = self.dt();
        for (i, w) in self.frames.windows(2).enumerate() {
            let step = w[1].timestamp - w[0].timestamp;
            if !(step > 0.0) || (step - dt).abs() > SPACING_TOLERANCE * dt.max(1.0) {
                return Err(Error::invalid(format!(
                    "scene {}: frames {} and {} are {step} s apart, expected {dt} s",
                    self.scene_id,
                    i,
                    i + 1
                )));
            }
        }
        let ids = self.agent_ids();
        if let Some(missing) = self.objects_of_interest.iter().find(|id| !ids.contains(id)) {
            return Err(Error::invalid(format!(
                "scene {}: object of interest {missing} never appears",
                self.scene_id
            )));
        }
        Ok(())
    }

    /// Recomputes velocity and acceleration of every agent from positions by
    /// finite differences over each contiguous run of valid frames.
    /// Agent types, headings and validity flags are kept.
    pub fn recompute_kinematics(&mut self) -> Result<()> {
        let dt = self.dt();
        for id in self.agent_ids() {
            let mut run: Vec<usize> = Vec::new();
            for t in 0..=self.frames.len() {
                let present = t < self.frames.len() && self.valid_state(t, id).is_some();
                if present {
                    run.push(t);
                    continue;
                }
                if !run.is_empty() {
                    let positions: Vec<Vec2> = run
                        .iter()
                        .map(|&k| self.frames[k].agents[&id].position)
                        .collect();
                    let states = finite_difference_states(&positions, dt)?;
                    for (&k, fd) in run.iter().zip(states) {
                        let s = self.frames[k].agents.get_mut(&id).expect("present");
                        s.velocity = fd.velocity;
                        s.acceleration = fd.acceleration;
                    }
                    run.clear();
                }
            }
        }
        Ok(())
    }
}
