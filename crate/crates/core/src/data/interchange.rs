//! Newline-delimited JSON scene interchange.
//!
//! One scene per line:
//!
//! ```text
//! {"scene_id": "s1", "fps": 5.0, "objects_of_interest": [1],
//!  "map": {"drivable_areas": [[[x, y], ...]], "crosswalks": [...],
//!          "lane_dividers": [...], "road_dividers": [...], "lane_centerlines": [...]},
//!  "frames": [{"t": 0.0, "agents": [{"id": 1, "type": "vehicle",
//!              "position": [x, y], "heading": 0.0, "valid": true,
//!              "velocity": [vx, vy], "acceleration": [ax, ay]}]}]}
//! ```
//!
//! Map layers, `heading`, `valid`, `velocity` and `acceleration` are
//! optional. When any agent lacks velocity or acceleration, the scene's
//! kinematics are recomputed from positions. Unknown agent types become
//! `other`. Blank lines are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::{AgentId, Frame, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, AgentState, AgentType, Vec2};
use crate::map::VectorMap;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    id: AgentId,
    #[serde(rename = "type", default)]
    agent_type: Option<String>,
    position: Vec2,
    #[serde(default)]
    heading: f64,
    #[serde(default = "default_valid")]
    valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    velocity: Option<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acceleration: Option<Vec2>,
}

fn default_valid() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    t: f64,
    agents: Vec<RawAgent>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    scene_id: String,
    fps: f64,
    #[serde(default)]
    objects_of_interest: Vec<AgentId>,
    #[serde(default)]
    map: VectorMap,
    frames: Vec<RawFrame>,
}

fn type_tag(t: AgentType) -> &'static str {
    match t {
        AgentType::Vehicle => "vehicle",
        AgentType::Pedestrian => "pedestrian",
        AgentType::Cyclist => "cyclist",
        AgentType::Other => "other",
    }
}

fn from_raw(raw: RawScene, line: usize) -> Result<SceneRecord> {
    let parse_err = |message: String| Error::Parse { line, message };
    let mut complete = true;
    let mut frames = Vec::with_capacity(raw.frames.len());
    for (fi, f) in raw.frames.into_iter().enumerate() {
        let mut frame = Frame {
            timestamp: f.t,
            ..Default::default()
        };
        for a in f.agents {
            if !a.position.is_finite() || !a.heading.is_finite() {
                return Err(parse_err(format!("frames[{fi}].agents id {}: non-finite position or heading", a.id)));
            }
            complete &= a.velocity.is_some() && a.acceleration.is_some();
            let state = AgentState {
                position: a.position,
                velocity: a.velocity.unwrap_or_default(),
                acceleration: a.acceleration.unwrap_or_default(),
                heading: wrap_angle(a.heading),
                agent_type: a.agent_type.as_deref().map(AgentType::from_tag).unwrap_or_default(),
                valid: a.valid,
            };
            if frame.agents.insert(a.id, state).is_some() {
                return Err(parse_err(format!("frames[{fi}]: duplicate agent id {}", a.id)));
            }
        }
        frames.push(frame);
    }
    if !raw.map.is_finite() {
        return Err(parse_err("map: non-finite coordinate".into()));
    }
    let mut scene = SceneRecord {
        scene_id: raw.scene_id,
        frames,
        vector_map: raw.map,
        fps: raw.fps,
        objects_of_interest: raw.objects_of_interest,
    };
    scene
        .validate()
        .map_err(|e| parse_err(e.to_string()))?;
    if !complete {
        scene.recompute_kinematics()?;
    }
    Ok(scene)
}

fn to_raw(scene: &SceneRecord) -> RawScene {
    RawScene {
        scene_id: scene.scene_id.clone(),
        fps: scene.fps,
        objects_of_interest: scene.objects_of_interest.clone(),
        map: scene.vector_map.clone(),
        frames: scene
            .frames
            .iter()
            .map(|f| RawFrame {
                t: f.timestamp,
                agents: f
                    .agents
                    .iter()
                    .map(|(&id, s)| RawAgent {
                        id,
                        agent_type: Some(type_tag(s.agent_type).to_string()),
                        position: s.position,
                        heading: s.heading,
                        valid: s.valid,
                        velocity: Some(s.velocity),
                        acceleration: Some(s.acceleration),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Parses scenes from any reader; line numbers in errors are 1-based.
pub fn read_scenes(reader: impl BufRead) -> Result<Vec<SceneRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawScene = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(from_raw(raw, line_no)?);
    }
    Ok(out)
}

pub fn write_scenes(mut writer: impl Write, scenes: &[SceneRecord]) -> Result<()> {
    for scene in scenes {
        serde_json::to_writer(&mut writer, &to_raw(scene)).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_scenes(path: &Path) -> Result<Vec<SceneRecord>> {
    let file = File::open(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    read_scenes(BufReader::new(file))
}

pub fn save_scenes(path: &Path, scenes: &[SceneRecord]) -> Result<()> {
    write_scenes(BufWriter::new(File::create(path)?), scenes)
}

/// Reads an exported scene file. Accepted format tags: `ndjson`, `jsonl`.
pub fn ingest_external(path: &Path, format_tag: &str) -> Result<Vec<SceneRecord>> {
    match format_tag.to_ascii_lowercase().as_str() {
        "ndjson" | "jsonl" => load_scenes(path),
        other => Err(Error::config(format!("unknown scene format `{other}`"))),
    }
}
