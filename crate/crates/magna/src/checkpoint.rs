//! JSON checkpoints: model layout plus every parameter matrix.

use std::fs;
use std::path::Path;

use magna_core::net::{ModelSpec, Network};
use magna_core::{Matrix, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TaskKind;
use crate::error::{Error, Result};

pub const FORMAT: &str = "magna-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub task: TaskKind,
    pub seed: u64,
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(task: TaskKind, seed: u64, net: &Network, params: &ParamStore) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            task,
            seed,
            spec: net.spec().clone(),
            params: params
                .iter()
                .map(|(_, name, m)| Tensor {
                    name: name.into(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the network and checks every stored tensor against its
    /// layout.
    pub fn restore(&self) -> Result<(Network, ParamStore)> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` version {}",
                self.format, self.version
            )));
        }
        let (net, mut params) = Network::new(self.spec.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut stored = ParamStore::new();
        for t in &self.params {
            let m = Matrix::from_vec(t.rows, t.cols, t.data.clone())
                .map_err(|_| Error::Checkpoint(format!("`{}`: data does not match {}x{}", t.name, t.rows, t.cols)))?;
            stored.add(t.name.clone(), m)?;
        }
        params.load_from(&stored)?;
        Ok((net, params))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })
    }
}
