//! Scenes, synthetic generation, interchange files and windowing.

pub mod interchange;
pub mod scene;
pub mod synthetic;
pub mod windows;

pub use interchange::{ingest_external, load_scenes, read_scenes, save_scenes, write_scenes};
pub use scene::{AgentId, Frame, SceneRecord};
pub use synthetic::{generate_scenarios, AgentTruth, Maneuver, ScenarioTruth, SyntheticConfig, Topology, TurnProbabilities};
pub use windows::{build_dataset, downsample, make_windows, transform_scene, FutureTruth, ObservationWindow, SelfState, WindowSpec};
