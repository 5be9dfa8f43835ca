//! Run configuration: one TOML document plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::EkfConfig;
use crate::data::{SyntheticConfig, WindowSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Scene file used for training.
    pub train: Option<PathBuf>,
    /// Scene file used for evaluation and prediction.
    pub test: Option<PathBuf>,
    /// Keep every n-th frame before windowing.
    pub downsample: usize,
    pub window: WindowSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            test: None,
            downsample: 1,
            window: WindowSpec::fixed(5, 15, 30.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: Vec<usize>,
    /// Evaluation horizon; defaults to the window horizon.
    pub horizon: Option<usize>,
    /// Also score the constant-velocity and Kalman baselines.
    pub baselines: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: vec![1, 5, 10, 20],
            horizon: None,
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub scenes: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            scenes: 100,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of evaluation and prediction sampling.
    pub seed: u64,
    /// Directory receiving checkpoints, logs and reports.
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub generate: GenerateConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ekf: EkfConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    // a bare word that is not valid TOML is taken as a string
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key `{path}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{path}` crosses a non-table at `{part}`")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text and applies `key.path=value` overrides in order.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; `None` starts from the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.data.window;
        if w.t_min < 2 || w.t_max < w.t_min {
            return Err(Error::config("observation length must satisfy 2 ≤ t_min ≤ t_max"));
        }
        if w.horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(w.radius > 0.0) {
            return Err(Error::config("neighbor radius must be positive"));
        }
        if self.data.downsample < 1 {
            return Err(Error::config("downsample factor must be at least 1"));
        }
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return Err(Error::config("k list must be nonempty with k ≥ 1"));
        }
        if let Some(h) = self.eval.horizon {
            if h == 0 || h > w.horizon {
                return Err(Error::config("evaluation horizon must lie in 1..=window horizon"));
            }
        }
        self.model.validate()?;
        self.train.validate()?;
        self.generate.synthetic.validate()
    }

    pub fn eval_horizon(&self) -> usize {
        self.eval.horizon.unwrap_or(self.data.window.horizon)
    }

    /// Checks that a configured path exists.
    pub fn require_file(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| Error::config(format!("no {what} path configured")))?;
        if !p.exists() {
            return Err(Error::config(format!("{what} path {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderMode;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let back = RunConfig::from_toml_with_overrides(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_apply_in_order() {
        let text = "seed = 3\n[train]\nepochs = 2\n";
        let c = RunConfig::from_toml_with_overrides(
            text,
            &[
                "train.epochs=7".into(),
                "model.hidden = 32".into(),
                "model.mode.map_mode=indie".into(),
                "model.mode.use_m_attn=false".into(),
                "eval.k=[1,3]".into(),
                "data.train=/tmp/x.ndjson".into(),
                "seed=9".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.model.hidden, 32);
        assert_eq!(c.model.mode, EncoderMode::INDIE);
        assert_eq!(c.eval.k, vec![1, 3]);
        assert_eq!(c.data.train, Some(PathBuf::from("/tmp/x.ndjson")));
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        for o in [
            "data.window.t_min=1",
            "data.window.horizon=0",
            "data.window.radius=-1.0",
            "eval.k=[0]",
            "model.mode.map_mode=none",
            "train.batch_size=0",
            "nokey",
            "train.epochs.x=1",
        ] {
            let r = RunConfig::from_toml_with_overrides("", &[o.to_string()]);
            assert!(matches!(r, Err(Error::Config(_))), "{o}: {r:?}");
        }
        assert!(matches!(
            RunConfig::from_toml_with_overrides("[train]\nbogus = 1\nepochs = 'x'", &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::load(Some(Path::new("/nonexistent.toml")), &[]), Err(Error::Config(_))));
        assert!(RunConfig::require_file(&Some(PathBuf::from("/nonexistent")), "data").is_err());
    }
}
