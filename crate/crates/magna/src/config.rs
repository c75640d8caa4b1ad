//! Run configuration files.
//!
//! A config file is a JSON object whose keys are the fields of
//! [`RunConfig`]. Missing keys take their defaults, nested objects merge
//! key by key, and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use magna_core::net::NetworkConfig;
use magna_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Node,
    Kg,
    Analyze,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Node => "node",
            TaskKind::Kg => "kg",
            TaskKind::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub data: PathBuf,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub out: PathBuf,
    /// Seed of the run; copied into `train.seed`.
    pub seed: u64,
    /// Reject validation / test triples with names unseen in training.
    pub kg_strict: bool,
}

/// Values given on the command line; they override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<TaskKind>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Defaults for `task`; KG runs use the KG optimizer settings.
    pub fn defaults(task: TaskKind, data: impl Into<PathBuf>) -> Self {
        Self {
            task,
            data: data.into(),
            network: NetworkConfig::default(),
            train: match task {
                TaskKind::Kg => TrainConfig::kg(),
                _ => TrainConfig::default(),
            },
            out: PathBuf::from("out"),
            seed: 0,
            kg_strict: false,
        }
    }

    /// Resolves a parsed config file against the task defaults.
    ///
    /// The seed is taken from the override, then the top-level `seed`, then
    /// `train.seed`, then 0.
    pub fn resolve(file: Value, ov: &Overrides) -> Result<Self> {
        let Value::Object(file) = file else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let task = match (ov.task, file.get("task")) {
            (Some(t), _) => t,
            (None, Some(v)) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("task: {e}")))?,
            (None, None) => TaskKind::Node,
        };
        let seed = ov
            .seed
            .map(Value::from)
            .or_else(|| file.get("seed").cloned())
            .or_else(|| file.get("train").and_then(|t| t.get("seed")).cloned())
            .unwrap_or(Value::from(0u64));

        let base =
            serde_json::to_value(Self::defaults(task, PathBuf::new())).map_err(|e| Error::Config(e.to_string()))?;
        let Value::Object(mut merged) = base else {
            unreachable!("a struct serializes to an object")
        };
        merged.remove("data");
        merge(&mut merged, file);
        merged.insert("task".into(), serde_json::to_value(task).expect("enum serializes"));
        if let Some(d) = &ov.data {
            merged.insert("data".into(), Value::from(d.to_string_lossy().into_owned()));
        }
        if let Some(o) = &ov.out {
            merged.insert("out".into(), Value::from(o.to_string_lossy().into_owned()));
        }
        merged.insert("seed".into(), seed.clone());
        if let Some(Value::Object(t)) = merged.get_mut("train") {
            t.insert("seed".into(), seed);
        }
        let cfg: Self = serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>, ov: &Overrides) -> Result<Self> {
        Self::resolve(read_json(path.as_ref())?, ov)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        if self.train.seed != self.seed {
            return Err(Error::Config("train.seed differs from seed".into()));
        }
        if self.task != TaskKind::Analyze && !self.data.is_dir() {
            return Err(Error::Config(format!(
                "data directory {} does not exist",
                self.data.display()
            )));
        }
        Ok(())
    }

    /// Pretty JSON with every default materialized.
    pub fn snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub(crate) fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

/// Recursive object merge; `patch` wins on scalars and arrays.
fn merge(base: &mut Map<String, Value>, patch: Map<String, Value>) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn tmp() -> Overrides {
        Overrides {
            data: Some(std::env::temp_dir()),
            ..Overrides::default()
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::resolve(json!({}), &tmp()).unwrap();
        assert_eq!(c.network, NetworkConfig::default());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.task, TaskKind::Node);
    }

    #[test]
    fn kg_task_uses_kg_optimizer_defaults() {
        let c = RunConfig::resolve(json!({"task": "kg", "train": {"patience": 7}}), &tmp()).unwrap();
        assert_eq!(c.train.learning_rate, TrainConfig::kg().learning_rate);
        assert_eq!(c.train.patience, 7);
    }

    #[test]
    fn partial_network_merges() {
        let c = RunConfig::resolve(json!({"network": {"diffusion": {"alpha": 0.3, "hops": 2}}}), &tmp()).unwrap();
        assert_eq!(c.network.diffusion.hops, 2);
        assert_eq!(c.network.heads, NetworkConfig::default().heads);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            json!({"lerning_rate": 1}),
            json!({"train": {"lr": 1}}),
            json!({"network": {"diffusion": {"beta": 1}}}),
        ] {
            assert!(RunConfig::resolve(bad, &tmp()).is_err());
        }
    }

    #[test]
    fn seed_precedence() {
        let c = RunConfig::resolve(json!({"train": {"seed": 4}}), &tmp()).unwrap();
        assert_eq!((c.seed, c.train.seed), (4, 4));
        let c = RunConfig::resolve(json!({"seed": 5, "train": {"seed": 4}}), &tmp()).unwrap();
        assert_eq!((c.seed, c.train.seed), (5, 5));
        let ov = Overrides { seed: Some(9), ..tmp() };
        let c = RunConfig::resolve(json!({"seed": 5}), &ov).unwrap();
        assert_eq!((c.seed, c.train.seed), (9, 9));
    }

    #[test]
    fn missing_data_dir_fails_validation() {
        let ov = Overrides {
            data: Some("/definitely/not/here".into()),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(json!({}), &ov).is_err());
        assert!(RunConfig::resolve(json!({}), &Overrides::default()).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let c = RunConfig::resolve(json!({"network": {"heads": 2}}), &tmp()).unwrap();
        let back: RunConfig = serde_json::from_str(&c.snapshot()).unwrap();
        assert_eq!(back, c);
    }
}
